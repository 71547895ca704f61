"""Few-shot training of the steering adapters."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import LabeledExample, stack
from .encoder import ModelParams, classify, encode
from .errors import ConfigError, ContractError, DataError
from .steering import SteeringConfig
from .tensor import GradTape, Tensor, backward


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 7.5e-4
    batch_size: int = 16
    lambda_kl: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shots: int = 16

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.shots < 1:
            raise ConfigError("epochs, batch_size and shots must be positive")
        if not self.learning_rate > 0 or self.lambda_kl < 0:
            raise ConfigError("learning_rate must be positive and lambda_kl nonnegative")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("Adam betas must lie in (0, 1) and eps must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    ce: float
    kl: float
    total: float


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape != (B,):
        raise DataError(f"expected {B} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= C):
        raise DataError(f"labels must lie in [0, {C}), got {labels.min()}..{labels.max()}")
    logp = T.log_softmax(logits, axis=-1)
    return T.neg(logp[np.arange(B), labels].mean())


def total_loss(ce: Tensor, kl_total: Tensor, lambda_kl: float) -> Tensor:
    if lambda_kl == 0:
        return ce
    return ce + T.mul_scalar(kl_total, lambda_kl)


def adam_step(params: Sequence[tuple[str, Tensor]], state: AdamState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam, in place on ``param.data``."""
    missing = [name for name, p in params if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for trainable parameters: {', '.join(missing)}")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params:
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def train(
    model: ModelParams,
    support_set: Sequence[LabeledExample],
    cfg: TrainConfig,
    steering_cfg: SteeringConfig,
    prompts: np.ndarray,
) -> tuple[ModelParams, list[EpochStats]]:
    """Adam on the adapters for ``cfg.epochs`` passes over the support set."""
    if not support_set:
        raise DataError("support set is empty")
    tokens, labels = stack(support_set)
    prompts_t = Tensor(prompts)
    model.set_trainable(True)
    params = model.trainable()
    state = AdamState()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A1]))
    history = []
    n = len(labels)
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n)
            sums = np.zeros(3)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                for _, p in params:
                    p.grad = None
                with GradTape() as tape:
                    img, txt, kl = encode(Tensor(tokens[idx]), prompts_t, model, steering_cfg)
                    ce = cross_entropy(classify(img, txt, model.log_temperature), labels[idx])
                    loss = total_loss(ce, kl, cfg.lambda_kl)
                if loss.requires_grad:
                    backward(loss, tape)
                    for _, p in params:
                        if p.grad is None:  # parameter unused under the current toggles
                            p.grad = np.zeros_like(p.data)
                    adam_step(params, state, cfg)
                sums += (ce.item(), kl.item(), loss.item())
            means = sums / steps_per_epoch(n, cfg.batch_size)
            history.append(EpochStats(epoch, *map(float, means)))
    finally:
        model.set_trainable(False)
    return model, history


def predict(
    model: ModelParams, tokens: np.ndarray, prompts: np.ndarray, steering_cfg: SteeringConfig, batch: int = 256
) -> np.ndarray:
    preds = []
    prompts_t = Tensor(prompts)
    for start in range(0, len(tokens), batch):
        img, txt, _ = encode(Tensor(tokens[start : start + batch]), prompts_t, model, steering_cfg)
        preds.append(classify(img, txt, model.log_temperature).data.argmax(axis=-1))
    return np.concatenate(preds)


def accuracy(model, tokens, labels, prompts, steering_cfg) -> float:
    """Percentage of correct predictions over the full prompt set."""
    return 100.0 * float(np.mean(predict(model, tokens, prompts, steering_cfg) == labels))


def history_csv(history: Sequence[EpochStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "ce", "kl", "total"])
    for h in history:
        w.writerow([h.epoch, repr(h.ce), repr(h.kl), repr(h.total)])
    return buf.getvalue()
