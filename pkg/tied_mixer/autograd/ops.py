"""Differentiable primitives. Each function takes tensors (or array-likes,
treated as constants), computes the result with numpy and records a
vector-Jacobian product on the active tape.

>>> from tied_mixer.autograd import Tape, Tensor, backward
>>> x = Tensor([[1.0, -2.0]], requires_grad=True)
>>> with Tape() as tape:
...     loss = sum_all(activation(x, "relu"))
>>> backward(loss, tape)
>>> x.grad.tolist()
[[1.0, 0.0]]
"""

import contextlib
import contextvars
import math
from typing import Dict, Iterator, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy.special import erf

from tied_mixer.autograd.rng import Rng
from tied_mixer.autograd.tensor import Tensor, as_tensor, record, unbroadcast
from tied_mixer.defs import ACTIVATIONS, BATCH_NORM_MOMENTUM, NORM_EPS, NORM_KINDS
from tied_mixer.errors import ContractError, DimensionError, ParameterError


@attr.s(auto_attribs=True)
class FlopCounter:
    """Floating-point operation counts per primitive, filled while a
    ``count_flops()`` block is active."""

    counts: Dict[str, int] = attr.Factory(dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add(self, op: str, flops: int):
        self.counts[op] = self.counts.get(op, 0) + int(flops)


_FLOP_COUNTER: "contextvars.ContextVar[Optional[FlopCounter]]" = contextvars.ContextVar(
    "tied_mixer_flop_counter", default=None
)


@contextlib.contextmanager
def count_flops() -> Iterator[FlopCounter]:
    counter = FlopCounter()
    token = _FLOP_COUNTER.set(counter)
    try:
        yield counter
    finally:
        _FLOP_COUNTER.reset(token)


def _count(op: str, flops: int):
    counter = _FLOP_COUNTER.get()
    if counter is not None:
        counter.add(op, flops)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    >>> matmul([[1.0, 0.0], [0.0, 0.0]], [[5.0, 6.0], [7.0, 8.0]]).data.tolist()
    [[5.0, 6.0], [0.0, 0.0]]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError("matmul", a.shape, b.shape) from None
    out = np.matmul(a.data, b.data)
    _count("matmul", 2 * out.size * a.shape[-1])

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return record("matmul", (a, b), out, vjp)


def add_broadcast(a, b) -> Tensor:
    """``a + b`` where ``b`` has ``a``'s shape or broadcasts over it
    (a bias row, a bias column, ...).

    >>> add_broadcast([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]).data.tolist()
    [[2.0, 3.0], [4.0, 5.0]]
    """
    a, b = as_tensor(a), as_tensor(b)
    if _broadcast_shape("add_broadcast", a, b) != a.shape:
        raise DimensionError("add_broadcast", a.shape, b.shape)
    out = a.data + b.data
    _count("add", out.size)

    def vjp(g):
        return g, unbroadcast(g, b.shape)

    return record("add", (a, b), out, vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape("sub", a, b)
    out = a.data - b.data
    _count("sub", int(np.prod(shape)))

    def vjp(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return record("sub", (a, b), out, vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape("mul", a, b)
    out = a.data * b.data
    _count("mul", int(np.prod(shape)))

    def vjp(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", (a, b), out, vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape("div", a, b)
    out = a.data / b.data
    _count("div", int(np.prod(shape)))

    def vjp(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("div", (a, b), out, vjp)


def square(a) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data
    _count("square", out.size)
    return record("square", (a,), out, lambda g: (2.0 * a.data * g,))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data.sum())
    _count("sum", a.size)
    return record("sum", (a,), out, lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    out = np.array(a.data.sum() / n)
    _count("mean", n)
    return record("mean", (a,), out, lambda g: (np.full(a.shape, float(g) / n),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape", a.shape, tuple(shape)) from None
    return record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError("transpose", a.shape)
    out = np.swapaxes(a.data, -1, -2)
    return record("transpose", (a,), out, lambda g: (np.swapaxes(g, -1, -2),))


def clamp_magnitude(x, floor: float) -> Tensor:
    """Move entries with ``|x| < floor`` out to ``floor`` keeping their sign
    (zero goes to ``+floor``). Moved entries pass no gradient.

    >>> clamp_magnitude([0.0, -1e-9, 0.5, -2.0], 1e-3).data.tolist()
    [0.001, -0.001, 0.5, -2.0]
    """
    x = as_tensor(x)
    if floor <= 0:
        raise ParameterError(f"floor must be > 0, got {floor}")
    small = np.abs(x.data) < floor
    out = np.where(small, np.where(x.data < 0, -floor, floor), x.data)
    _count("clamp", out.size)
    return record("clamp", (x,), out, lambda g: (np.where(small, 0.0, g),))


def take(a, indices: Sequence[int], axis: int = -1) -> Tensor:
    """Select entries along ``axis`` (used to restrict to target channels).

    >>> take([[1.0, 2.0, 3.0]], [2, 0]).data.tolist()
    [[3.0, 1.0]]
    """
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < -a.shape[axis] or idx.max() >= a.shape[axis]):
        raise DimensionError("take", a.shape, idx.shape)
    out = np.take(a.data, idx, axis=axis)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.add.at(np.moveaxis(grad, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (grad,)

    return record("take", (a,), out, vjp)


def activation(x, kind: str = "relu") -> Tensor:
    """Pointwise nonlinearity: ``relu`` or exact (erf-based) ``gelu``.

    >>> activation([-1.0, 0.0, 2.0], "relu").data.tolist()
    [0.0, 0.0, 2.0]
    """
    x = as_tensor(x)
    if kind not in ACTIVATIONS:
        raise ParameterError(f"unsupported activation {kind!r}")
    if kind == "relu":
        slope = (x.data > 0).astype(np.float64)
        out = np.maximum(x.data, 0.0)
    else:
        cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        out = x.data * cdf
        slope = cdf + x.data * pdf
    _count(kind, out.size)
    return record(kind, (x,), out, lambda g: (g * slope,))


def row_softmax(x) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the row max.

    >>> row_softmax([[1000.0, 1000.0]]).data.tolist()
    [[0.5, 0.5]]
    """
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)
    _count("softmax", 4 * out.size)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), out, vjp)


@attr.s(auto_attribs=True, eq=False)
class RunningStats:
    """Per-variate running mean/variance kept by batch normalization for
    inference."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BATCH_NORM_MOMENTUM

    @classmethod
    def fresh(cls, n_features: int) -> "RunningStats":
        return cls(np.zeros(n_features), np.ones(n_features))

    def update(self, mean: np.ndarray, var: np.ndarray):
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * mean
        self.var = (1.0 - m) * self.var + m * var


def normalize(
    x,
    kind: str,
    gamma,
    beta,
    eps: float = NORM_EPS,
    *,
    running: Optional[RunningStats] = None,
    training: bool = True,
) -> Tensor:
    """Layer or batch normalization with a per-variate affine.

    ``layer`` normalizes every time step (row) over the variates (last axis).
    ``batch`` normalizes every variate over all remaining axes (batch and
    time); with ``running`` given, batch statistics update it during
    training and replace the batch statistics at inference.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if kind not in NORM_KINDS:
        raise ParameterError(f"unsupported normalization {kind!r}")
    if eps <= 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    n_features = x.shape[-1]
    if gamma.shape != (n_features,) or beta.shape != (n_features,):
        raise DimensionError("normalize", x.shape, gamma.shape, beta.shape)

    axes: Tuple[int, ...] = (x.ndim - 1,) if kind == "layer" else tuple(range(x.ndim - 1))
    use_running = kind == "batch" and running is not None and not training
    if use_running:
        assert running is not None
        mean, var = running.mean, running.var
    else:
        mean = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        if kind == "batch" and running is not None:
            running.update(mean.reshape(-1), var.reshape(-1))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data
    _count("normalize", 8 * out.size)
    n = int(np.prod([x.shape[a] for a in axes]))
    outer = tuple(range(x.ndim - 1))

    def vjp(g):
        dgamma = (g * xhat).sum(axis=outer)
        dbeta = g.sum(axis=outer)
        dxhat = g * gamma.data
        if use_running:
            dx = dxhat * inv_std
        else:
            dx = (inv_std / n) * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        return dx, dgamma, dbeta

    return record("normalize", (x, gamma, beta), out, vjp)


def dropout(x, p: float, training: bool, rng: Optional[Rng] = None) -> Tensor:
    """Inverted dropout: at training time zero each entry with probability
    ``p`` and scale survivors by ``1 / (1 - p)``; identity otherwise."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout at training time needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out = x.data * mask
    _count("dropout", out.size)
    return record("dropout", (x,), out, lambda g: (g * mask,))
