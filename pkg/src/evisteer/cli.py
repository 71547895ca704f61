"""``evisteer`` command line: experiments, self-checks and the parameter census."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .errors import ConfigError
from .harness import ExperimentConfig
from .steering import count_parameters
from .verify import SUITES, run_verification

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, nargs="+", help="seeds to run (default: from config, 0 1 2)")
    common.add_argument("--config", type=Path, help="JSON experiment config; unknown keys are rejected")
    common.add_argument("--out", type=Path, help="directory for result files (default: stdout only)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    common.add_argument("--timing", action="store_true", help="record wall-clock seconds (breaks byte-identity)")

    parser = argparse.ArgumentParser(prog="evisteer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("verify", parents=[common], help="run every invariant suite")
    p.add_argument("--suite", action="append", choices=sorted(SUITES), help="restrict to a suite")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks only")
    p = sub.add_parser("fewshot", parents=[common], help="zero-shot baseline and K-shot adaptation")
    p.add_argument("--shots", type=int, nargs="+", help="K values (default 4 8 16)")
    sub.add_parser("domaingen", parents=[common], help="train on source, evaluate ID and OOD targets")
    p = sub.add_parser("ablate", parents=[common], help="component ablations with deltas vs full")
    p.add_argument("--variants", nargs="+", choices=[v.name for v in harness.ABLATIONS])
    p = sub.add_parser("sweep", parents=[common], help="depth or latent-dimension sweep")
    p.add_argument("--axis", choices=("depth", "dimension"), required=True)
    p.add_argument("--values", type=int, nargs="+")
    p = sub.add_parser("count-params", parents=[common], help="trainable adapter scalars")
    p.add_argument("--D-v", dest="D_v", type=int, default=768)
    p.add_argument("--D-t", dest="D_t", type=int, default=768)
    p.add_argument("-r", type=int, default=4)
    p.add_argument("-d", type=int, default=11)
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed:
        cfg = replace(cfg, seeds=tuple(args.seed))
    return cfg


def emit(text: str, args, stem: str) -> None:
    sys.stdout.write(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / f"{stem}.{args.format}", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def emit_records(records, args, stem: str) -> None:
    text = harness.records_json(records) if args.format == "json" else harness.records_csv(records)
    emit(text, args, stem)


def _checks_text(checks, fmt: str) -> str:
    if fmt == "json":
        rows = [
            {"name": c.name, "measured": c.measured, "tolerance": c.tolerance, "passed": c.passed, "detail": c.detail}
            for c in checks
        ]
        return json.dumps(rows, indent=2) + "\n"
    lines = ["check,measured,tolerance,passed"]
    lines += [f"{c.name},{c.measured:.6g},{c.tolerance:.3g},{int(c.passed)}" for c in checks]
    return "\n".join(lines) + "\n"


def run(args) -> int:
    if args.command == "count-params":
        n = count_parameters(args.D_v, args.D_t, args.r, args.d)
        if args.format == "json":
            emit(f'{{"D_t": {args.D_t}, "D_v": {args.D_v}, "d": {args.d}, "parameters": {n}, "r": {args.r}}}\n',
                 args, "count_params")
        else:
            emit(f"D_v,D_t,r,d,parameters\n{args.D_v},{args.D_t},{args.r},{args.d},{n}\n", args, "count_params")
        return EXIT_OK

    if args.command in ("verify", "gradcheck"):
        suites = ["gradients"] if args.command == "gradcheck" else args.suite
        checks = run_verification(suites)
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"{args.command}.{args.format}").write_text(_checks_text(checks, args.format))
        failed = [c.name for c in checks if not c.passed]
        print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
        return EXIT_FAIL if failed else EXIT_OK

    cfg = load_config(args)
    opts = {"workers": args.workers, "timing": args.timing}
    if args.command == "fewshot":
        emit_records(harness.run_fewshot(cfg, args.shots, **opts), args, "fewshot")
    elif args.command == "domaingen":
        emit_records(harness.run_domain_generalization(cfg, **opts), args, "domaingen")
    elif args.command == "ablate":
        variants = harness.ABLATIONS
        if args.variants:
            variants = tuple(v for v in harness.ABLATIONS if v.name in args.variants)
        emit_records(harness.run_ablation(cfg, variants, **opts), args, "ablate")
    elif args.command == "sweep":
        emit_records(harness.run_sweep(cfg, args.axis, args.values, **opts), args, f"sweep_{args.axis}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None and args.command in ("verify", "gradcheck", "count-params"):
            load_config(args)  # validate even when unused
        return run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
