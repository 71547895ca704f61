"""Frozen-backbone accuracy against rotation angle, bias and noise level."""
from __future__ import annotations

import numpy as np
from _common import load, parser, write

from evisteer import harness
from evisteer.data import DomainShift, apply_domain_shift, class_prompts, generate_eval
from evisteer.steering import SteeringConfig
from evisteer.train import accuracy

SHIFTS = [("rotation_deg", v) for v in (0, 30, 60, 90)] + [("bias_scale", v) for v in (0.3, 1.0)] + \
         [("noise_mult", v) for v in (1.3, 2.0)]


def main():
    args = parser(__doc__).parse_args()
    cfg = load(args)
    prompts = class_prompts(cfg.task)
    rows = ["shift,value," + ",".join(f"seed{s}" for s in cfg.seeds) + ",mean"]
    for key, value in SHIFTS:
        spec = apply_domain_shift(cfg.task, DomainShift(**{key: value}))
        accs = []
        for seed in cfg.seeds:
            X, y = generate_eval(spec, cfg.eval_size, harness.TARGET_STREAM + seed)
            accs.append(accuracy(harness.backbone(cfg, seed), X, y, prompts, SteeringConfig(d=0)))
        rows.append(f"{key},{value}," + ",".join(f"{a:.2f}" for a in accs) + f",{np.mean(accs):.2f}")
        print(rows[-1])
    write(args.out / "shift_sanity.csv", "\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
