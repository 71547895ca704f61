"""Train 16-shot on the source task, evaluate on the source and each shifted target."""
from __future__ import annotations

from _common import load, parser, write

from evisteer import harness


def main():
    args = parser(__doc__).parse_args()
    cfg = load(args)
    records = harness.run_domain_generalization(cfg, workers=args.workers)
    write(args.out / "domaingen.csv", harness.records_csv(records))
    mean = records[-1]
    targets = "  ".join(f"{k}={v:.2f}" for k, v in mean.accuracy_ood.items())
    print(f"ID {mean.accuracy_id:.2f}  OOD {mean.ood_mean:.2f} ({targets})  HM {mean.hm:.2f}")


if __name__ == "__main__":
    main()
