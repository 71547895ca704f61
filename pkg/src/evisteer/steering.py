"""Evidential cross-modal steering for one adapted layer.

Each modality's tokens are mapped into a 2r-dimensional latent, split into a
mean-update channel and an uncertainty channel. The uncertainty channel
becomes inverse-evidence uncertainty ``u = 1 / (softplus(z**2) + eps + 1)``,
which is read as a two-mass belief (support ``1 - u``, ignorance ``u``). Text
beliefs, pooled over class prompts at the summary token, are fused with the
vision beliefs by Dempster's rule and gate the vision update; the text update
is gated by its own belief.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, DomainError, NumericalError
from .tensor import Tensor

DEFAULT_EPS = 1e-8


@dataclass(frozen=True)
class Components:
    vision_adapt: bool = True
    text_adapt: bool = True
    evidential_gate: bool = True
    crossmodal_belief: bool = True


@dataclass(frozen=True)
class SteeringConfig:
    r: int = 4
    d: int = 4
    eps: float = DEFAULT_EPS
    components: Components = field(default_factory=Components)

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError(f"latent dimension r must be >= 1, got {self.r}")
        if self.d < 0:
            raise ConfigError(f"adapted depth d must be >= 0, got {self.d}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")


@dataclass
class ModalityAdapter:
    """Steering parameters of one modality at one layer."""

    W_down: Tensor  # (D, 2r)
    b_down: Tensor  # (2r,)
    W_up: Tensor  # (r, D)
    b_up: Tensor  # (D,)
    w_conf: Tensor  # (r, 1)
    b_conf: Tensor  # (1,)
    alpha_raw: Tensor  # ()

    @classmethod
    def init(cls, D: int, r: int, rng: np.random.Generator) -> ModalityAdapter:
        bound = 1.0 / np.sqrt(D)
        return cls(
            W_down=Tensor(rng.uniform(-bound, bound, size=(D, 2 * r))),
            b_down=Tensor(np.zeros(2 * r)),
            W_up=Tensor(np.zeros((r, D))),
            b_up=Tensor(np.zeros(D)),
            w_conf=Tensor(np.zeros((r, 1))),
            b_conf=Tensor(np.zeros(1)),
            alpha_raw=Tensor(0.0),
        )

    def named(self) -> Iterator[tuple[str, Tensor]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    @property
    def alpha(self) -> Tensor:
        return T.sigmoid(self.alpha_raw)


@dataclass
class AdapterLayerParams:
    vision: ModalityAdapter
    text: ModalityAdapter

    @classmethod
    def init(cls, D_v: int, D_t: int, r: int, rng: np.random.Generator) -> AdapterLayerParams:
        return cls(vision=ModalityAdapter.init(D_v, r, rng), text=ModalityAdapter.init(D_t, r, rng))

    def named(self) -> Iterator[tuple[str, Tensor]]:
        for prefix, mod in (("vision", self.vision), ("text", self.text)):
            for name, t in mod.named():
                yield f"{prefix}.{name}", t

    @property
    def r(self) -> int:
        return self.vision.W_up.shape[0]


@dataclass
class BeliefPair:
    support: Tensor
    ignorance: Tensor

    def __post_init__(self):
        if self.support.shape != self.ignorance.shape:
            raise DimensionError(
                f"belief masses differ in shape: {self.support.shape} vs {self.ignorance.shape}"
            )


@dataclass
class EvidentialState:
    evidence: Tensor
    beta: Tensor
    u: Tensor


def down_project(tokens: Tensor, W_down: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """Affine map to 2r latents, split into (mean-update, uncertainty) halves."""
    if tokens.shape[-1] != W_down.shape[0]:
        raise DimensionError(f"tokens {tokens.shape} do not match down-projection {W_down.shape}")
    if W_down.shape[1] % 2:
        raise DimensionError(f"down-projection needs an even column count, got {W_down.shape}")
    r = W_down.shape[1] // 2
    z = T.matmul(tokens, W_down) + bias
    return z[..., :r], z[..., r:]


def up_project(z_mu: Tensor, W_up: Tensor, bias: Tensor) -> Tensor:
    if z_mu.shape[-1] != W_up.shape[0]:
        raise DimensionError(f"latent {z_mu.shape} does not match up-projection {W_up.shape}")
    return T.matmul(z_mu, W_up) + bias


def evidential_state(z_sigma: Tensor, eps: float = DEFAULT_EPS) -> EvidentialState:
    evidence = T.add_scalar(T.softplus(T.square(z_sigma)), eps)
    beta = T.add_scalar(evidence, 1.0)
    return EvidentialState(evidence=evidence, beta=beta, u=T.reciprocal(beta))


def belief_masses(u: Tensor) -> BeliefPair:
    lo, hi = float(u.data.min()), float(u.data.max())
    if lo < -1e-9 or hi > 1.0 + 1e-9:
        raise ContractError(f"uncertainty must lie in [0, 1], got range [{lo}, {hi}]")
    return BeliefPair(support=T.add_scalar(T.neg(u), 1.0), ignorance=u)


def pool_text_uncertainty(u_t: Tensor, eos_index) -> Tensor:
    """Mean over classes of the summary-token uncertainty, shaped (1, 1, r)."""
    C, P, r = u_t.shape
    idx = np.broadcast_to(np.asarray(eos_index, dtype=np.int64), (C,))
    if np.any(idx < 0) or np.any(idx >= P):
        raise DimensionError(f"summary-token index {eos_index!r} out of range for {P} text tokens")
    picked = u_t[np.arange(C), idx]  # (C, r)
    return picked.mean(axis=0, keepdims=True).reshape(1, 1, r)


def ds_combine(text: BeliefPair, vision: BeliefPair, eps: float = DEFAULT_EPS) -> Tensor:
    """Dempster's rule on the {apply-update, ignorance} frame; returns fused support.

    ``b_t b_v / (1 - (b_t u_v + u_t b_v) + eps)``, broadcasting text over vision.
    """
    conflict = text.support * vision.ignorance + text.ignorance * vision.support
    denom = T.add_scalar(T.neg(conflict), 1.0 + eps)
    lowest = float(denom.data.min())
    if lowest <= 0.0 or lowest < eps / 2:
        raise NumericalError("Dempster normaliser collapsed; masses are not valid belief pairs")
    return (text.support * vision.support) / denom


def confidence_gate(support: Tensor, w: Tensor, bias: Tensor, update: Tensor) -> Tensor:
    """Scale each token's update by ``sigmoid(support @ w + bias)``."""
    if support.shape[-1] != w.shape[0] or w.shape[-1] != 1:
        raise DimensionError(f"support {support.shape} does not match confidence weights {w.shape}")
    if support.shape[:-1] != update.shape[:-1]:
        raise DimensionError(f"support {support.shape} and update {update.shape} disagree on tokens")
    gate = T.sigmoid(T.matmul(support, w) + bias)
    return gate * update


def kl_gamma_regularizer(beta: Tensor) -> Tensor:
    """Mean of KL(Gamma(beta, 1) || Gamma(1, 1)) = (beta - 1) digamma(beta) - lgamma(beta)."""
    if not np.all(beta.data > 0):
        raise DomainError("Gamma concentration must be strictly positive")
    kl = T.add_scalar(beta, -1.0) * T.digamma(beta) - T.lgamma(beta)
    return kl.mean()


def _branch(tokens: Tensor, mod: ModalityAdapter, eps: float):
    z_mu, z_sigma = down_project(tokens, mod.W_down, mod.b_down)
    state = evidential_state(z_sigma, eps)
    return up_project(z_mu, mod.W_up, mod.b_up), state


def adapter_forward(
    V: Tensor,
    Tx: Tensor,
    params: AdapterLayerParams,
    cfg: SteeringConfig,
    eos_index,
) -> tuple[Tensor, Tensor, Tensor]:
    """One layer's confidence-weighted updates ``(delta_V, delta_T, kl)``.

    Switched-off modalities return an all-zero constant and are not computed.
    Without a text branch the vision gate falls back to its own belief.
    """
    comp = cfg.components
    zero_v = T.zeros(*V.shape)
    zero_t = T.zeros(*Tx.shape)
    if not (comp.vision_adapt or comp.text_adapt):
        return zero_v, zero_t, Tensor(0.0)

    delta_t, delta_v = zero_t, zero_v
    kls = []
    text_belief = None
    if comp.text_adapt:
        upd_t, state_t = _branch(Tx, params.text, cfg.eps)
        if comp.evidential_gate:
            belief_t = belief_masses(state_t.u)
            delta_t = confidence_gate(belief_t.support, params.text.w_conf, params.text.b_conf, upd_t)
            text_belief = belief_masses(pool_text_uncertainty(state_t.u, eos_index))
            kls.append(kl_gamma_regularizer(state_t.beta))
        else:
            delta_t = upd_t

    if comp.vision_adapt:
        upd_v, state_v = _branch(V, params.vision, cfg.eps)
        if comp.evidential_gate:
            belief_v = belief_masses(state_v.u)
            if comp.crossmodal_belief and text_belief is not None:
                support = ds_combine(text_belief, belief_v, cfg.eps)
            else:
                support = belief_v.support
            delta_v = confidence_gate(support, params.vision.w_conf, params.vision.b_conf, upd_v)
            kls.append(kl_gamma_regularizer(state_v.beta))
        else:
            delta_v = upd_v

    if not kls:
        kl = Tensor(0.0)
    elif len(kls) == 1:
        kl = kls[0]
    else:
        kl = T.mul_scalar(kls[0] + kls[1], 0.5)
    return delta_v, delta_t, kl


def count_parameters(D_v: int, D_t: int, r: int, d: int) -> int:
    """Trainable scalars of a d-layer adapter stack."""
    per_layer = sum(D * 2 * r + 2 * r + r * D + D + r + 1 + 1 for D in (D_v, D_t))
    return d * per_layer


def adapter_stack_parameters(adapters: Sequence[AdapterLayerParams]) -> int:
    return sum(t.size for layer in adapters for _, t in layer.named())
