"""Build the pre-aligned backbones for each seed and save them as checkpoints."""
from __future__ import annotations

from _common import load, parser

from evisteer import harness
from evisteer.encoder import save_checkpoint


def main():
    args = parser(__doc__).parse_args()
    cfg = load(args)
    args.out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        model = harness.backbone(cfg, seed)
        path = args.out / f"backbone_seed{seed}.evst"
        save_checkpoint(path, model)
        print(f"seed {seed}: {path}  sha256 {model.frozen_digest()[:16]}")


if __name__ == "__main__":
    main()
