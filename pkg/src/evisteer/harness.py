"""Experiment protocols on synthetic tasks: few-shot, domain shift, ablations, sweeps."""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .data import (
    DomainShift,
    SyntheticTaskSpec,
    apply_domain_shift,
    class_prompts,
    generate_eval,
    generate_task,
    sample_few_shot,
)
from .encoder import EncoderConfig, ModelParams, init_backbone
from .errors import ConfigError, DomainError
from .pretrain import PretextConfig
from .steering import Components, SteeringConfig
from .train import TrainConfig, accuracy, train

EVAL_STREAM, SUPPORT_STREAM, TARGET_STREAM = 10_000, 20_000, 30_000


def harmonic_mean(a: float, b: float) -> float:
    if not (a > 0 and b > 0):
        raise DomainError(f"harmonic mean needs positive inputs, got {a}, {b}")
    return 2.0 * a * b / (a + b)


def pct(x: float) -> float:
    """Percentages are reported to two decimals."""
    return round(float(x), 2)


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class TargetConfig:
    name: str
    shift: DomainShift = field(default_factory=DomainShift)
    class_subset: tuple[int, ...] | None = None


def default_targets() -> tuple[TargetConfig, ...]:
    return (
        TargetConfig("noise", DomainShift(noise_mult=1.3)),
        TargetConfig("rotate", DomainShift(rotation_deg=20.0)),
        TargetConfig("bias_subset", DomainShift(bias_scale=0.3), (0, 1)),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    steering: SteeringConfig = field(default_factory=SteeringConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretext: PretextConfig = field(default_factory=PretextConfig)
    targets: tuple[TargetConfig, ...] = field(default_factory=default_targets)
    seeds: tuple[int, ...] = (0, 1, 2)
    shots: tuple[int, ...] = (4, 8, 16)
    eval_size: int = 500
    pool_per_class: int = 64
    depth_values: tuple[int, ...] | None = None  # None means 0..N
    dimension_values: tuple[int, ...] = (1, 2, 4, 8, 16)

    def __post_init__(self):
        t, e = self.task, self.encoder
        if (t.P_v, t.D_v, t.P_t, t.D_t) != (e.P_v, e.D_v, e.P_t, e.D_t):
            raise ConfigError("task token grid does not match the encoder config")
        if self.steering.d > e.N:
            raise ConfigError(f"steering depth d={self.steering.d} exceeds N={e.N}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.eval_size < 1 or self.pool_per_class < max(self.shots, default=1):
            raise ConfigError("eval_size must be positive and pool_per_class must cover the largest K")

    @property
    def depths(self) -> tuple[int, ...]:
        return self.depth_values if self.depth_values is not None else tuple(range(self.encoder.N + 1))

    def to_dict(self) -> dict:
        return _plain(self)

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        return _build(cls, raw, "config")

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(raw)


_NESTED: dict[tuple[type, str], type] = {
    (ExperimentConfig, "task"): SyntheticTaskSpec,
    (ExperimentConfig, "encoder"): EncoderConfig,
    (ExperimentConfig, "steering"): SteeringConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "pretext"): PretextConfig,
    (SyntheticTaskSpec, "shift"): DomainShift,
    (SteeringConfig, "components"): Components,
    (TargetConfig, "shift"): DomainShift,
}
_TUPLES = {
    (ExperimentConfig, "seeds"),
    (ExperimentConfig, "shots"),
    (ExperimentConfig, "depth_values"),
    (ExperimentConfig, "dimension_values"),
    (SyntheticTaskSpec, "class_subset"),
    (TargetConfig, "class_subset"),
}


def _build(cls: type, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        sub = _NESTED.get((cls, key))
        if sub is not None:
            value = _build(sub, value, f"{where}.{key}")
        elif cls is ExperimentConfig and key == "targets":
            if not isinstance(value, list):
                raise ConfigError(f"{where}.targets must be a list")
            value = tuple(_build(TargetConfig, v, f"{where}.targets[{i}]") for i, v in enumerate(value))
        elif (cls, key) in _TUPLES and value is not None:
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{key} must be a list of integers")
            value = tuple(int(v) for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


# ---------------------------------------------------------------- records


@dataclass
class RunRecord:
    experiment: str
    variant: str
    seed: int | None  # None marks the mean over seeds
    config: dict
    accuracy_id: float
    accuracy_ood: dict[str, float] = field(default_factory=dict)
    ood_mean: float | None = None
    hm: float | None = None
    delta: dict[str, float] | None = None
    loss_history: list[float] = field(default_factory=list)
    wall_seconds: float | None = None

    def __post_init__(self):
        for v in [self.accuracy_id, *self.accuracy_ood.values()]:
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"accuracy {v} outside [0, 100]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> RunRecord:
        return cls(**json.loads(text))


def _record(experiment, variant, seed, config, acc_id, ood: dict[str, float], history, seconds) -> RunRecord:
    ood = {k: pct(v) for k, v in ood.items()}
    ood_mean = pct(np.mean(list(ood.values()))) if ood else None
    hm = pct(harmonic_mean(pct(acc_id), ood_mean)) if ood else None
    return RunRecord(
        experiment=experiment,
        variant=variant,
        seed=seed,
        config=config,
        accuracy_id=pct(acc_id),
        accuracy_ood=ood,
        ood_mean=ood_mean,
        hm=hm,
        loss_history=[float(h) for h in history],
        wall_seconds=seconds,
    )


def mean_record(records: Sequence[RunRecord]) -> RunRecord:
    """Average of per-seed records; HM is recomputed from the averaged columns."""
    first = records[0]
    acc_id = np.mean([r.accuracy_id for r in records])
    ood = {k: np.mean([r.accuracy_ood[k] for r in records]) for k in first.accuracy_ood}
    rec = _record(first.experiment, first.variant, None, first.config, acc_id, ood, [], None)
    if ood:
        # average the per-target means so the row matches its own ID/OOD columns
        rec.ood_mean = pct(np.mean([r.ood_mean for r in records]))
        rec.hm = pct(harmonic_mean(rec.accuracy_id, rec.ood_mean))
    return rec


# ---------------------------------------------------------------- runs


_BACKBONES: dict[tuple, dict] = {}


def backbone(cfg: ExperimentConfig, seed: int) -> ModelParams:
    """Pre-aligned backbone for ``seed``; cached per process as a state dict."""
    key = (seed, cfg.encoder, cfg.pretext, _world_key(cfg.task))
    if key not in _BACKBONES:
        _BACKBONES[key] = init_backbone(cfg.encoder, seed, cfg.pretext, cfg.task).state_dict()
    return ModelParams.from_state_dict({k: v.copy() for k, v in _BACKBONES[key].items()})


def _world_key(task: SyntheticTaskSpec) -> SyntheticTaskSpec:
    # pretext classes depend on the world, not on the task prototypes or shift
    return replace(task, C=2, prototype_seed=0, shift=DomainShift(), class_subset=None, nuisance_dims=0)


@dataclass(frozen=True)
class Job:
    experiment: str
    variant: str
    seed: int
    K: int
    steering: SteeringConfig
    with_targets: bool


def _run_job(cfg: ExperimentConfig, job: Job, timing: bool) -> RunRecord:
    start = time.perf_counter()
    model = backbone(cfg, job.seed)
    task = cfg.task
    prompts = class_prompts(task)
    X, y = generate_eval(task, cfg.eval_size, EVAL_STREAM + job.seed)
    history: list[float] = []
    scfg = job.steering
    if scfg.d > 0:
        pool = generate_task(task, cfg.pool_per_class, SUPPORT_STREAM + job.seed)
        support = sample_few_shot(pool, job.K, job.seed)
        model.attach_adapters(scfg.r, scfg.d, job.seed)
        tcfg = replace(cfg.train, seed=job.seed, shots=job.K)
        model, hist = train(model, support, tcfg, scfg, prompts)
        history = [h.total for h in hist]
    acc_id = accuracy(model, X, y, prompts, scfg)
    ood = {}
    if job.with_targets:
        for target in cfg.targets:
            spec = apply_domain_shift(task, target.shift, target.class_subset)
            Xt, yt = generate_eval(spec, cfg.eval_size, TARGET_STREAM + job.seed)
            ood[target.name] = accuracy(model, Xt, yt, prompts, scfg)
    snapshot = {"K": job.K, "seed": job.seed, "steering": _plain(scfg), "experiment": cfg.to_dict()}
    seconds = round(time.perf_counter() - start, 3) if timing else None
    return _record(job.experiment, job.variant, job.seed, snapshot, acc_id, ood, history, seconds)


def _run_all(cfg: ExperimentConfig, jobs: Sequence[Job], workers: int, timing: bool) -> list[RunRecord]:
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(cfg, j, timing) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, [cfg] * len(jobs), jobs, [timing] * len(jobs)))


def _with_means(records: list[RunRecord], key: Callable[[RunRecord], Any]) -> list[RunRecord]:
    """Group by ``key`` in first-seen order; seeds ascending, then the mean row."""
    groups: dict[Any, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(key(r), []).append(r)
    out = []
    for rows in groups.values():
        rows = sorted(rows, key=lambda r: r.seed)
        out.extend(rows)
        out.append(mean_record(rows))
    return out


def run_fewshot(
    cfg: ExperimentConfig, shots: Sequence[int] | None = None, workers: int = 1, timing: bool = False
) -> list[RunRecord]:
    """Zero-shot rows plus one adapted row per (K, seed), each group closed by a mean row."""
    shots = tuple(shots or cfg.shots)
    zero = SteeringConfig(r=cfg.steering.r, d=0, eps=cfg.steering.eps)
    jobs = [Job("fewshot", "zero_shot", s, 0, zero, False) for s in cfg.seeds]
    jobs += [Job("fewshot", f"evi_steer_K{K}", s, K, cfg.steering, False) for K in shots for s in cfg.seeds]
    return _with_means(_run_all(cfg, jobs, workers, timing), key=lambda r: r.variant)


def run_domain_generalization(
    cfg: ExperimentConfig, variant: str = "full", steering: SteeringConfig | None = None,
    workers: int = 1, timing: bool = False,
) -> list[RunRecord]:
    K = max(cfg.shots)
    steering = steering or cfg.steering
    jobs = [Job("domaingen", variant, s, K, steering, True) for s in cfg.seeds]
    return _with_means(_run_all(cfg, jobs, workers, timing), key=lambda r: r.variant)


@dataclass(frozen=True)
class AblationVariant:
    name: str
    components: Components


ABLATIONS = (
    AblationVariant("full", Components()),
    AblationVariant("no_visual", Components(vision_adapt=False)),
    AblationVariant("no_textual", Components(text_adapt=False)),
    AblationVariant("no_evidential", Components(evidential_gate=False)),
    AblationVariant("no_crossmodal", Components(crossmodal_belief=False)),
)


def run_ablation(
    cfg: ExperimentConfig, variants: Sequence[AblationVariant] = ABLATIONS, workers: int = 1, timing: bool = False
) -> list[RunRecord]:
    """Domain generalisation per variant with signed ID/OOD/HM deltas against ``full``."""
    if not any(v.name == "full" for v in variants):
        variants = (ABLATIONS[0], *variants)
    K = max(cfg.shots)
    jobs = [
        Job("ablate", v.name, s, K, replace(cfg.steering, components=v.components), True)
        for v in variants
        for s in cfg.seeds
    ]
    records = _with_means(_run_all(cfg, jobs, workers, timing), key=lambda r: r.variant)
    full = {r.seed: r for r in records if r.variant == "full"}
    for r in records:
        ref = full[r.seed]
        r.delta = {
            "id": pct(r.accuracy_id - ref.accuracy_id),
            "ood": pct(r.ood_mean - ref.ood_mean),
            "hm": pct(r.hm - ref.hm),
        }
    return records


def run_sweep(
    cfg: ExperimentConfig, axis: str, values: Sequence[int] | None = None, workers: int = 1, timing: bool = False
) -> list[RunRecord]:
    """One domain-generalisation run per (value, seed); rows sorted by value."""
    if axis == "depth":
        values = tuple(values if values is not None else cfg.depths)
        bad = [v for v in values if not 0 <= v <= cfg.encoder.N]
        make = lambda v: replace(cfg.steering, d=v)  # noqa: E731
    elif axis == "dimension":
        values = tuple(values if values is not None else cfg.dimension_values)
        bad = [v for v in values if v < 1]
        make = lambda v: replace(cfg.steering, r=v)  # noqa: E731
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected depth or dimension")
    if bad:
        raise ConfigError(f"invalid {axis} values {bad}")
    K = max(cfg.shots)
    jobs = [Job("sweep", f"{axis}={v}", s, K, make(v), True) for v in sorted(set(values)) for s in cfg.seeds]
    return _with_means(_run_all(cfg, jobs, workers, timing), key=lambda r: r.variant)


def sweep_value(record: RunRecord) -> int:
    return int(record.variant.split("=", 1)[1])


# ---------------------------------------------------------------- output


def _fmt(x) -> str:
    return "" if x is None else f"{x:.2f}"


def records_csv(records: Sequence[RunRecord]) -> str:
    """Flat table: one row per record, target columns in config order."""
    targets = list(records[0].accuracy_ood) if records else []
    has_delta = any(r.delta is not None for r in records)
    header = ["experiment", "variant", "seed", "K", "accuracy_id"]
    if targets:
        header += [f"ood_{t}" for t in targets] + ["ood_mean", "hm"]
    if has_delta:
        header += ["delta_id", "delta_ood", "delta_hm"]
    header += ["final_loss"]
    if any(r.wall_seconds is not None for r in records):
        header += ["wall_seconds"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in records:
        row = [r.experiment, r.variant, "mean" if r.seed is None else r.seed, r.config.get("K", ""), _fmt(r.accuracy_id)]
        if targets:
            row += [_fmt(r.accuracy_ood.get(t)) for t in targets] + [_fmt(r.ood_mean), _fmt(r.hm)]
        if has_delta:
            d = r.delta or {}
            row += [_fmt(d.get("id")), _fmt(d.get("ood")), _fmt(d.get("hm"))]
        row += [f"{r.loss_history[-1]:.6f}" if r.loss_history else ""]
        if "wall_seconds" in header:
            row += ["" if r.wall_seconds is None else f"{r.wall_seconds:.3f}"]
        w.writerow(row)
    return buf.getvalue()


def records_json(records: Sequence[RunRecord]) -> str:
    return json.dumps([asdict(r) for r in records], indent=2, sort_keys=True) + "\n"


def records_from_json(text: str) -> list[RunRecord]:
    return [RunRecord(**d) for d in json.loads(text)]
