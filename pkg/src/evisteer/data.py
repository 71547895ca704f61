"""Synthetic dual-modal classification tasks with dialable domain shift.

A *world* (``world_seed``) fixes how a low-dimensional semantic vector is
written into image patch tokens and how a class name is written into a text
prompt. A *task* (``prototype_seed``) draws class prototypes in that semantic
space plus a set of class-irrelevant nuisance directions in token space.
Images are ``prototype + noise`` spread over the patch grid; every stochastic
component scales with ``noise_sigma``, so at ``noise_sigma == 0`` all examples
of a class coincide.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import archive
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class DomainShift:
    rotation_deg: float = 0.0  # rotation in the plane of the first two prototypes
    bias_scale: float = 0.0  # additive offset along a fixed token direction
    noise_mult: float = 1.0

    def __post_init__(self):
        vals = (self.rotation_deg, self.bias_scale, self.noise_mult)
        if not all(np.isfinite(v) for v in vals) or self.noise_mult < 0:
            raise ConfigError(f"invalid domain shift {self}")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    C: int = 3
    prototype_seed: int = 0
    noise_sigma: float = 1.0
    nuisance_dims: int = 4
    shift: DomainShift = field(default_factory=DomainShift)
    class_subset: tuple[int, ...] | None = None
    world_seed: int = 0
    semantic_dim: int = 8
    prototype_scale: float = 3.0
    nuisance_scale: float = 8.0
    patch_noise: float = 0.3
    prompt_noise: float = 0.5
    P_v: int = 17
    D_v: int = 64
    P_t: int = 8
    D_t: int = 64

    def __post_init__(self):
        if self.C < 2:
            raise ConfigError(f"need at least two classes, got C={self.C}")
        if not self.noise_sigma > 0:
            raise ConfigError(f"noise_sigma must be positive, got {self.noise_sigma}")
        if self.nuisance_dims < 0 or self.nuisance_dims > self.semantic_dim:
            raise ConfigError(f"nuisance_dims must lie in [0, semantic_dim], got {self.nuisance_dims}")
        if self.class_subset is not None:
            subset = tuple(int(c) for c in self.class_subset)
            if not subset or any(not 0 <= c < self.C for c in subset) or len(set(subset)) != len(subset):
                raise ConfigError(f"class_subset {self.class_subset} invalid for C={self.C}")
            object.__setattr__(self, "class_subset", tuple(sorted(subset)))
        if self.semantic_dim < 2:
            raise ConfigError("semantic_dim must be at least 2")

    @property
    def classes(self) -> tuple[int, ...]:
        return self.class_subset if self.class_subset is not None else tuple(range(self.C))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_subset"] = None if self.class_subset is None else list(self.class_subset)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticTaskSpec:
        d = dict(d)
        if "shift" in d:
            d["shift"] = DomainShift(**d["shift"])
        if d.get("class_subset") is not None:
            d["class_subset"] = tuple(d["class_subset"])
        return cls(**d)


@dataclass
class LabeledExample:
    image_tokens: np.ndarray  # (P_v, D_v)
    label: int


@dataclass(frozen=True)
class _World:
    A_v: np.ndarray  # (S, D_v) semantic -> image token
    profile: np.ndarray  # (P_v,) semantic amplitude per patch, 0 at the class slot
    A_t: np.ndarray  # (S, D_t) semantic -> class-name token
    template: np.ndarray  # (P_t - 2, D_t) "a photo of a"
    eos: np.ndarray  # (D_t,)


@dataclass(frozen=True)
class _TaskDraw:
    prototypes: np.ndarray  # (C, S)
    prompt_offsets: np.ndarray  # (C, S) ambiguity of the class names
    nuisance: np.ndarray  # (k, S) orthonormal rows
    bias_dir: np.ndarray  # (D_v,) unit
    rotation: np.ndarray  # (S, S)


@lru_cache(maxsize=64)
def _world(world_seed: int, S: int, P_v: int, D_v: int, P_t: int, D_t: int) -> _World:
    rng = np.random.default_rng(np.random.SeedSequence([world_seed, 0x5EED, S]))
    profile = rng.uniform(0.5, 1.5, size=P_v)
    profile[0] = 0.0
    # 1/sqrt(S) keeps token entries O(1) for O(1) semantic coordinates
    return _World(
        A_v=rng.normal(0.0, 1.0 / np.sqrt(S), size=(S, D_v)),
        profile=profile,
        A_t=rng.normal(0.0, 1.0 / np.sqrt(S), size=(S, D_t)),
        template=rng.normal(0.0, 1.0, size=(max(P_t - 2, 0), D_t)),
        eos=rng.normal(0.0, 1.0, size=D_t),
    )


def _rotation(prototypes: np.ndarray, degrees: float) -> np.ndarray:
    S = prototypes.shape[1]
    if degrees == 0.0:
        return np.eye(S)
    e1 = prototypes[0] / np.linalg.norm(prototypes[0])
    v = prototypes[1] - (prototypes[1] @ e1) * e1
    e2 = v / np.linalg.norm(v)
    th = np.deg2rad(degrees)
    # rotate the (e1, e2) plane, leave its complement alone
    P = np.outer(e1, e1) + np.outer(e2, e2)
    return np.eye(S) + (np.cos(th) - 1.0) * P + np.sin(th) * (np.outer(e2, e1) - np.outer(e1, e2))


def _draw(spec: SyntheticTaskSpec) -> _TaskDraw:
    return _draw_cached(
        spec.prototype_seed, spec.C, spec.semantic_dim, spec.D_v, spec.nuisance_dims,
        spec.prototype_scale, spec.shift.rotation_deg,
    )


@lru_cache(maxsize=256)
def _draw_cached(seed, C, S, D_v, k, scale, rotation_deg) -> _TaskDraw:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9807]))
    prototypes = rng.normal(0.0, scale, size=(C, S))
    offsets = rng.normal(0.0, 1.0, size=(C, S))
    basis, _ = np.linalg.qr(rng.normal(size=(S, S)))
    bias = rng.normal(size=D_v)
    return _TaskDraw(
        prototypes=prototypes,
        prompt_offsets=offsets,
        nuisance=basis[:, :k].T.copy(),
        bias_dir=bias / np.linalg.norm(bias),
        rotation=_rotation(prototypes, rotation_deg),
    )


def _tokens(spec: SyntheticTaskSpec, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    w = _world(spec.world_seed, spec.semantic_dim, spec.P_v, spec.D_v, spec.P_t, spec.D_t)
    draw = _draw(spec)
    n = labels.size
    sigma = spec.noise_sigma * spec.shift.noise_mult
    S, P, D, k = spec.semantic_dim, spec.P_v, spec.D_v, spec.nuisance_dims
    z = draw.prototypes[labels] + sigma * rng.normal(size=(n, S))
    z += (sigma * spec.nuisance_scale) * rng.normal(size=(n, k)) @ draw.nuisance
    z = z @ draw.rotation.T
    semantic = (z @ w.A_v)[:, None, :] * w.profile[None, :, None]  # (n, P, D)
    noise = (sigma * spec.patch_noise) * rng.normal(size=(n, P, D))
    tokens = semantic + noise
    tokens += spec.shift.bias_scale * np.sqrt(D) * draw.bias_dir
    tokens[:, 0, :] = 0.0  # class-token slot, filled by the encoder
    return tokens


def _rng(spec: SyntheticTaskSpec, seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, spec.prototype_seed, spec.world_seed, stream]))


def generate_arrays(spec: SyntheticTaskSpec, counts: dict[int, int], seed: int) -> tuple[np.ndarray, np.ndarray]:
    labels = np.concatenate([np.full(counts[c], c, dtype=np.int64) for c in sorted(counts)])
    return _tokens(spec, labels, _rng(spec, seed, 1)), labels


def generate_task(spec: SyntheticTaskSpec, n_per_class: int, seed: int) -> list[LabeledExample]:
    if n_per_class < 1:
        raise DataError(f"n_per_class must be >= 1, got {n_per_class}")
    tokens, labels = generate_arrays(spec, {c: n_per_class for c in spec.classes}, seed)
    return [LabeledExample(image_tokens=t, label=int(y)) for t, y in zip(tokens, labels)]


def generate_eval(spec: SyntheticTaskSpec, total: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``total`` examples split as evenly as possible over the present classes."""
    classes = spec.classes
    base, extra = divmod(total, len(classes))
    counts = {c: base + (i < extra) for i, c in enumerate(classes)}
    return generate_arrays(spec, counts, seed)


def class_prompts(spec: SyntheticTaskSpec) -> np.ndarray:
    """Prompt token grids for all C classes: template, class name, summary token."""
    w = _world(spec.world_seed, spec.semantic_dim, spec.P_v, spec.D_v, spec.P_t, spec.D_t)
    draw = _draw(spec)
    names = (draw.prototypes + spec.prompt_noise * draw.prompt_offsets) @ w.A_t
    out = np.empty((spec.C, spec.P_t, spec.D_t))
    out[:, : spec.P_t - 2] = w.template
    out[:, spec.P_t - 2] = names
    out[:, spec.P_t - 1] = w.eos
    return out


def stack(examples: Sequence[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([e.image_tokens for e in examples]), np.array([e.label for e in examples], dtype=np.int64)


def sample_few_shot(dataset: Sequence[LabeledExample], K: int, seed: int) -> list[LabeledExample]:
    """Exactly K examples per class, sampled without replacement."""
    if K < 1:
        raise DataError(f"K must be >= 1, got {K}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF5]))
    by_class: dict[int, list[int]] = {}
    for i, ex in enumerate(dataset):
        by_class.setdefault(ex.label, []).append(i)
    chosen = []
    for c in sorted(by_class):
        idx = by_class[c]
        if len(idx) < K:
            raise DataError(f"class {c} has {len(idx)} examples, fewer than K={K}")
        chosen.extend(np.asarray(idx)[rng.choice(len(idx), size=K, replace=False)].tolist())
    order = rng.permutation(len(chosen))
    return [dataset[chosen[i]] for i in order]


def apply_domain_shift(
    spec: SyntheticTaskSpec, shift: DomainShift | None = None, class_subset: Sequence[int] | None = None
) -> SyntheticTaskSpec:
    """Target-domain spec: same classes and prompts, shifted image distribution."""
    return replace(
        spec,
        shift=shift if shift is not None else spec.shift,
        class_subset=tuple(class_subset) if class_subset is not None else spec.class_subset,
    )


def save_dataset(path, examples: Sequence[LabeledExample], spec: SyntheticTaskSpec, seed: int) -> None:
    """EVST archive of tokens and labels plus a JSON manifest next to it."""
    path = Path(path)
    tokens, labels = stack(examples)
    archive.save(path, {"image_tokens": tokens, "labels": labels.astype(np.float64)})
    manifest = {"spec": spec.to_dict(), "seed": seed, "count": len(examples)}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> tuple[list[LabeledExample], SyntheticTaskSpec, int]:
    path = Path(path)
    arrays = archive.load(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    examples = [
        LabeledExample(image_tokens=t, label=int(y)) for t, y in zip(arrays["image_tokens"], arrays["labels"])
    ]
    return examples, SyntheticTaskSpec.from_dict(manifest["spec"]), int(manifest["seed"])
