"""Component ablations: ID / OOD / HM with signed deltas against the full model."""
from __future__ import annotations

from _common import load, parser, write

from evisteer import harness


def main():
    args = parser(__doc__).parse_args()
    records = harness.run_ablation(load(args), workers=args.workers)
    write(args.out / "ablation.csv", harness.records_csv(records))
    print(f"{'variant':<15}{'ID':>14}{'OOD':>14}{'HM':>14}")
    for r in records:
        if r.seed is None:
            d = r.delta
            print(f"{r.variant:<15}{r.accuracy_id:7.2f} ({d['id']:+5.2f}){r.ood_mean:7.2f} ({d['ood']:+5.2f})"
                  f"{r.hm:7.2f} ({d['hm']:+5.2f})")


if __name__ == "__main__":
    main()
