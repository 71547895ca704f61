"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`GradTape` is active and at least
one input requires a gradient. Outside a tape every op is a plain numpy
computation, which is what evaluation uses.

    >>> w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with GradTape() as tape:
    ...     loss = (w * w).sum()
    >>> backward(loss, tape)
    >>> w.grad
    array([2., 4., 6.])
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import special
from .errors import ContractError, DimensionError, DomainError, NumericalError

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> GradTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    # operator sugar; the real work lives in the module-level functions
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, "mean", axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape))


def ones(*shape) -> Tensor:
    return Tensor(np.ones(shape))


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class GradTape:
    """Append-only record of primitive ops, replayed in reverse by :func:`backward`."""

    nodes: list[_Node] = field(default_factory=list)
    _produced: set[int] = field(default_factory=set, repr=False)

    def __enter__(self) -> GradTape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("GradTape exited out of order")
        stack.pop()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule) -> None:
        self.nodes.append(_Node(inputs, out, rule))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    # one reduction; a finite sum of finite entries is the common case
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NumericalError("operation produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, rule)
    else:
        out.requires_grad = False
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor, tape: GradTape) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss was not computed from any tensor requiring grad on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            gi = _unbroadcast(np.asarray(gi, dtype=np.float64), inp.shape)
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
            if key not in tape._produced:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# binary ops with broadcasting


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0.0):
        raise DomainError("division by a zero entry")
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b), lambda g: (g / bd, -g * out / bd))


def matmul(a, b) -> Tensor:
    """Contract the last axis of ``a`` with the second-to-last of ``b``.

    Leading axes broadcast, so ``(B, m, k) @ (k, n)`` and
    ``(B, H, m, k) @ (B, H, k, n)`` both work.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = ad.reshape(-1, ad.shape[-1]) @ bd if bd.ndim == 2 and ad.ndim > 2 else ad @ bd
        if bd.ndim == 2 and ad.ndim > 2:
            out = out.reshape(ad.shape[:-1] + (bd.shape[-1],))
    except ValueError as exc:
        raise DimensionError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from exc

    need_a, need_b = a.requires_grad, b.requires_grad

    def rule(g):
        ga = g @ np.swapaxes(bd, -1, -2) if need_a else None
        if not need_b:
            gb = None
        elif bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(out, (a, b), rule)


# ---------------------------------------------------------------------------
# element-wise ops


def _unary(x, fwd, deriv) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = fwd(xd)
    return _result(out, (x,), lambda g: (g * deriv(xd, out),))


def square(x) -> Tensor:
    return _unary(x, np.square, lambda x, y: 2.0 * x)


def softplus(x) -> Tensor:
    # overflow-safe: max(x, 0) + log1p(exp(-|x|))
    return _unary(
        x,
        lambda x: np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))),
        lambda x, y: _sigmoid(x),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    return _unary(x, _sigmoid, lambda x, y: y * (1.0 - y))


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda x, y: 1.0 - y * y)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log of a nonpositive entry")
    return _unary(x, np.log, lambda x, y: 1.0 / x)


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda x, y: y)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("sqrt of a nonpositive entry")
    return _unary(x, np.sqrt, lambda x, y: 0.5 / y)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,))


def add_scalar(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _result(x.data + c, (x,), lambda g: (g,))


def mul_scalar(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def reciprocal(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data == 0.0):
        raise DomainError("reciprocal of a zero entry")
    return _unary(x, lambda x: 1.0 / x, lambda x, y: -y * y)


def digamma(x) -> Tensor:
    return _unary(x, special.digamma, lambda x, y: special.trigamma(x))


def lgamma(x) -> Tensor:
    return _unary(x, special.lgamma, lambda x, y: special.digamma(x))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> Tensor:
    """Tanh approximation of GELU."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    out = 0.5 * xd * (1.0 + t)

    def rule(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * d_inner),)

    return _result(out, (x,), rule)


ELEMENTWISE = {
    "square": square,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "neg": neg,
    "reciprocal": reciprocal,
    "add_scalar": add_scalar,
    "mul_scalar": mul_scalar,
}


def elementwise(x, fn: str, *args) -> Tensor:
    try:
        op = ELEMENTWISE[fn]
    except KeyError:
        raise ContractError(f"unknown element-wise function {fn!r}") from None
    return op(x, *args)


# ---------------------------------------------------------------------------
# reductions and normalisations


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} is invalid for a rank-{ndim} tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise DimensionError(f"repeated axis in {axes}")
    return tuple(sorted(out))


def reduce(x, kind: str = "sum", axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    if kind == "sum":
        scale = 1.0
    elif kind == "mean":
        count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        scale = 1.0 / count
    else:
        raise ContractError(f"unknown reduction {kind!r}")
    out = x.data.sum(axis=axes, keepdims=keepdims) * scale
    shape = x.shape

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, shape),)

    return _result(np.asarray(out, dtype=np.float64), (x,), rule)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), rule)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    prob = np.exp(out)

    def rule(g):
        return (g - prob * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), rule)


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    wd = weight.data
    out = xhat * wd + bias.data

    def rule(g):
        gx = g * wd
        n = xd.shape[-1]
        dx = inv / n * (n * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
        return dx, g * xhat, g

    return _result(out, (x, weight, bias), rule)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from exc
    old = x.shape
    return _result(out, (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _result(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def take(x, index) -> Tensor:
    """Basic or advanced indexing, differentiable."""
    x = as_tensor(x)
    try:
        out = x.data[index]
    except IndexError as exc:
        raise DimensionError(f"index {index!r} out of range for shape {x.shape}") from exc
    shape = x.shape
    basic = _is_basic(index)

    def rule(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, dtype=np.float64), (x,), rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, rule)
