"""Central finite-difference check of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, EvaluationError
from .tensor import GradTape, Tensor, backward


def _eval(f: Callable[[], Tensor], where: str) -> float:
    value = f()
    if value.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {value.shape}")
    out = value.item()
    if not np.isfinite(out):
        raise EvaluationError(f"function returned {out!r} at {where}")
    return out


def analytic_grads(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    saved = [(p.requires_grad, p.grad) for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    try:
        with GradTape() as tape:
            loss = f()
        backward(loss, tape)
        return [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    finally:
        for p, (flag, grad) in zip(params, saved):
            p.requires_grad, p.grad = flag, grad


def numeric_grads(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    out = []
    for k, p in enumerate(params):
        g = np.zeros(p.shape)
        flat = p.data.reshape(-1)  # view: p.data is contiguous
        for i in range(flat.size):
            orig = flat[i]
            label = f"param {p.name or k} entry {tuple(int(j) for j in np.unravel_index(i, p.shape))}"
            try:
                flat[i] = orig + h
                plus = _eval(f, label + " (+h)")
                flat[i] = orig - h
                minus = _eval(f, label + " (-h)")
            finally:
                flat[i] = orig
            g.reshape(-1)[i] = (plus - minus) / (2.0 * h)
        out.append(g)
    return out


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape and central-difference gradients.

    ``f`` takes no arguments and closes over ``params``; entries are perturbed
    in place and restored. The relative error of each entry uses the
    denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if h <= 0:
        raise ContractError("step h must be positive")
    params = list(params)
    for p in params:
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
    _eval(f, "the unperturbed point")
    analytic = analytic_grads(f, params)
    numeric = numeric_grads(f, params, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
