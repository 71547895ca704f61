"""Adapted depth and latent dimension sweeps (HM per value, mean over seeds)."""
from __future__ import annotations

from _common import load, parser, write

from evisteer import harness


def main():
    p = parser(__doc__)
    p.add_argument("--axis", choices=("depth", "dimension", "both"), default="both")
    args = p.parse_args()
    cfg = load(args)
    for axis in ("depth", "dimension") if args.axis == "both" else (args.axis,):
        records = harness.run_sweep(cfg, axis, workers=args.workers)
        write(args.out / f"sweep_{axis}.csv", harness.records_csv(records))
        for r in records:
            if r.seed is None:
                print(f"{axis}={harness.sweep_value(r):<3} ID {r.accuracy_id:6.2f}  OOD {r.ood_mean:6.2f}  HM {r.hm:6.2f}")


if __name__ == "__main__":
    main()
