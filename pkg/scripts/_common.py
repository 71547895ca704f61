"""Shared argument handling for the experiment scripts."""
from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

from evisteer.harness import ExperimentConfig


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--workers", type=int, default=1)
    return p


def load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    return replace(cfg, seeds=tuple(args.seeds)) if args.seeds else cfg


def write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {path}")
