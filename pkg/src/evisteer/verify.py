"""Self-checks bundled behind ``evisteer verify``: algebra, gradients, identity, census."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, ModelParams, _random_frozen, classify, encode
from .gradcheck import grad_check
from .steering import BeliefPair, SteeringConfig, count_parameters, ds_combine, evidential_state, kl_gamma_regularizer
from .tensor import Tensor
from .train import cross_entropy, total_loss

EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name:<28} measured={self.measured:.6g}  tol={self.tolerance:.3g}{extra}"


def _below(name: str, measured: float, tol: float, detail: str = "") -> Check:
    return Check(name, float(measured), tol, bool(measured < tol), detail)


# ---------------------------------------------------------------- parameter census


def census_checks() -> list[Check]:
    n = count_parameters(768, 768, 4, 11)
    gap = abs(n - 221_000) / 221_000
    share = 100.0 * n / 196_000_000
    return [
        Check("census_count", n, 0, n == 219_956, "expected 219956"),
        _below("census_vs_221K", gap, 0.01, f"count={n}"),
        _below("census_share_of_196M", abs(share - 0.11), 0.02, f"share={share:.5f}%"),
    ]


# ---------------------------------------------------------------- Dempster-Shafer


def _pair(b) -> BeliefPair:
    b = Tensor(b)
    return BeliefPair(support=b, ignorance=T.add_scalar(T.neg(b), 1.0))


def ds_checks(n: int = 101, eps: float = 1e-8) -> list[Check]:
    g = np.linspace(0.0, 1.0, n)
    bt, bv = g[:, None], g[None, :]
    fused = ds_combine(_pair(bt), _pair(bv), eps).data
    swapped = ds_combine(_pair(bv), _pair(bt), eps).data
    # the algebraic rule itself, away from total conflict where it is undefined
    exact = ds_combine(_pair(bt[1:-1]), _pair(bv), 0.0).data
    closed = bt[1:-1] * bv / (bt[1:-1] * bv + (1 - bt[1:-1]) * (1 - bv))
    neutral = ds_combine(_pair(np.array([0.5])), _pair(g), 0.0).data
    neutral_eps = ds_combine(_pair(np.array([0.5])), _pair(g), eps).data
    return [
        _below("ds_commutativity", np.abs(fused - swapped.T).max(), 1e-12),
        _below("ds_neutral_element", np.abs(neutral - g).max(), 1e-8),
        _below("ds_neutral_with_eps", np.abs(neutral_eps - g).max(), 2 * eps + 1e-16, "bound 2*eps*b_v"),
        _below("ds_normalized_product", np.abs(exact - closed).max(), 1e-12),
        Check("ds_range", float(fused.max()), 1.0, bool(fused.min() >= 0 and fused.max() < 1), "[0, 1)"),
        Check(
            "ds_monotone",
            float(min(np.diff(fused, axis=0).min(), np.diff(fused, axis=1).min())),
            0.0,
            bool(np.diff(fused, axis=0).min() >= 0 and np.diff(fused, axis=1).min() >= 0),
            "min increment",
        ),
    ]


# ---------------------------------------------------------------- evidential


def kl_closed_form(beta: float) -> float:
    """Closed forms at the two reference points."""
    if beta == 2.0:
        return 1.0 - EULER_GAMMA
    if beta == 0.5:
        return 0.5 * (EULER_GAMMA + 2 * math.log(2)) - 0.5 * math.log(math.pi)
    raise ValueError("closed form only tabulated at beta in {0.5, 2}")


def evidential_checks(eps: float = 1e-8) -> list[Check]:
    z = np.concatenate([np.linspace(-100, 100, 20_001), [0.0]])
    u = evidential_state(Tensor(z), eps).u.data
    cap = 1.0 / (1.0 + math.log(2.0))
    at_zero = evidential_state(Tensor([0.0]), eps).u.item()
    off_zero = u[np.abs(z) > 0]
    grid = np.logspace(-3, 3, 600_001)
    beta = Tensor(grid)
    kl = (T.add_scalar(beta, -1.0) * T.digamma(beta) - T.lgamma(beta)).data
    kl2 = kl_gamma_regularizer(Tensor([2.0])).item()
    kl05 = kl_gamma_regularizer(Tensor([0.5])).item()
    return [
        Check("u_range", float(u.max()), cap, bool(u.min() > 0 and u.max() <= cap), "(0, 1/(1+ln 2)]"),
        Check("u_max_only_at_zero", float(off_zero.max()), at_zero, bool(off_zero.max() < at_zero)),
        Check("kl_nonnegative", float(kl.min()), 0.0, bool(kl.min() >= -1e-13)),
        _below("kl_argmin_at_one", abs(grid[int(np.argmin(kl))] - 1.0), 1e-6),
        _below("kl_beta_2", abs(kl2 - kl_closed_form(2.0)), 1e-7, f"KL(2)={kl2:.8f}"),
        _below("kl_beta_0.5", abs(kl05 - kl_closed_form(0.5)), 1e-6, f"KL(0.5)={kl05:.8f}"),
    ]


# ---------------------------------------------------------------- gradients


def toy_model(seed: int, N: int = 2, D: int = 8, P_v: int = 3, P_t: int = 3, r: int = 2, d: int = 2,
              heads: int = 2, trained: bool = True) -> ModelParams:
    """Small random dual encoder; ``trained`` fills adapters with random values."""
    cfg = EncoderConfig(N=N, D_v=D, D_t=D, P_v=P_v, P_t=P_t, heads=heads, hidden_mult=2, E=4)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70]))
    model = ModelParams(config=cfg, frozen=_random_frozen(cfg, rng))
    model.attach_adapters(r, d, seed)
    if trained:
        for _, t in model.trainable():
            t.data = rng.normal(0.0, 0.5, size=t.shape)
    return model


def full_loss_grad_error(seed: int = 0, h: float = 1e-5, lambda_kl: float = 1e-4) -> float:
    """Relative error of tape vs finite-difference gradients of CE + lambda*KL."""
    model = toy_model(seed)
    cfg = SteeringConfig(r=2, d=2)
    rng = np.random.default_rng(seed)
    c = model.config
    X = Tensor(rng.normal(size=(4, c.P_v, c.D_v)))
    P = Tensor(rng.normal(size=(3, c.P_t, c.D_t)))
    y = np.array([0, 1, 2, 1])

    def loss():
        img, txt, kl = encode(X, P, model, cfg)
        return total_loss(cross_entropy(classify(img, txt, model.log_temperature), y), kl, lambda_kl)

    return grad_check(loss, [t for _, t in model.trainable()], h=h)


def op_grad_error(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 3, 4)))
    w = Tensor(rng.normal(size=(4, 5)))
    pos = Tensor(rng.uniform(0.3, 3.0, size=(5,)))
    c = Tensor(rng.normal(size=(2, 3, 5)))

    def f():
        z = T.matmul(T.layer_norm(x, T.ones(4), T.zeros(4)), w)
        z = T.gelu(z) + T.softplus(z) * T.sigmoid(z)
        z = T.log_softmax(z, -1) + T.digamma(pos) - T.lgamma(pos)
        return (z * c).sum()

    return grad_check(f, [x, w, pos])


def gradient_checks() -> list[Check]:
    return [
        _below("grad_tensor_ops", op_grad_error(), 1e-6),
        _below("grad_full_loss_d2_r2", full_loss_grad_error(), 1e-4),
        _below("grad_kl_path_lambda1", full_loss_grad_error(seed=1, lambda_kl=1.0), 1e-4),
    ]


# ---------------------------------------------------------------- identity at init


def identity_deviation(n_configs: int = 20, seed: int = 0) -> float:
    """Max |steered - frozen| over random toy configs with fresh adapters."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_configs):
        N = int(rng.integers(1, 4))
        heads = int(rng.choice([1, 2]))
        D = heads * int(rng.integers(2, 5))
        d = int(rng.integers(1, N + 1))
        r = int(rng.integers(1, 5))
        model = toy_model(1000 + i, N=N, D=D, P_v=int(rng.integers(2, 5)), P_t=int(rng.integers(2, 5)),
                          r=r, d=d, heads=heads, trained=False)
        c = model.config
        X = Tensor(rng.normal(size=(int(rng.integers(1, 4)), c.P_v, c.D_v)))
        P = Tensor(rng.normal(size=(int(rng.integers(2, 4)), c.P_t, c.D_t)))
        img0, txt0, _ = encode(X, P, model, SteeringConfig(r=r, d=0))
        img1, txt1, _ = encode(X, P, model, SteeringConfig(r=r, d=d))
        worst = max(worst, float(np.abs(img1.data - img0.data).max()), float(np.abs(txt1.data - txt0.data).max()))
    return worst


def identity_checks() -> list[Check]:
    dev = identity_deviation()
    return [Check("identity_at_init", dev, 0.0, dev == 0.0, "20 random toy configs, bit-exact")]


SUITES: dict[str, Callable[[], list[Check]]] = {
    "census": census_checks,
    "ds": ds_checks,
    "evidential": evidential_checks,
    "gradients": gradient_checks,
    "identity": identity_checks,
}


def run_verification(suites: Sequence[str] | None = None, echo: Callable[[str], None] | None = print) -> list[Check]:
    """Run the named suites (all by default), echoing one line per check."""
    results = []
    for name in suites or SUITES:
        for check in SUITES[name]():
            results.append(check)
            if echo is not None:
                echo(check.line())
    return results
