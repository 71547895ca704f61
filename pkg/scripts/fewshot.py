"""Zero-shot baseline vs K-shot steering on the default synthetic task."""
from __future__ import annotations

from _common import load, parser, write

from evisteer import harness


def main():
    p = parser(__doc__)
    p.add_argument("--shots", type=int, nargs="+")
    args = p.parse_args()
    records = harness.run_fewshot(load(args), args.shots, workers=args.workers)
    write(args.out / "fewshot.csv", harness.records_csv(records))
    for r in records:
        if r.seed is None:
            print(f"{r.variant:>16}  {r.accuracy_id:6.2f}%")


if __name__ == "__main__":
    main()
