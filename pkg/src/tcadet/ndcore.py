"""Dense float64 tensors with tape-based reverse-mode autodiff.

Provides exactly the layers the detection head needs: matmul, affine,
batch norm, dropout, tanh/ReLU, softmax and friends, plus a finite-difference
gradient checker. Tensors are immutable values once created; a Tape and the
parameters it touches belong to a single thread for the duration of one
forward/backward pass.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateBatchError,
    DimensionError,
    NumericsError,
    UsageError,
)

TRAIN = "train"
EVAL = "eval"

_uid = itertools.count()
_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "uid", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericsError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.uid = next(_uid)
        self.op: str | None = None  # name of producing op, None for leaves

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class TapeRecord:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable  # grad_out -> tuple of grads aligned with inputs


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward().

    Construction order is execution order, which is already topological;
    backward walks the records exactly once, newest first.
    """

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every reachable leaf tensor. d(loss)/d(loss) = 1."""
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        flowing: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
        if loss.op is None and loss.requires_grad:
            if loss.grad is None:
                loss.grad = np.zeros_like(loss.data)
            loss.grad += flowing[loss.uid]
        for rec in reversed(self.records):
            g_out = flowing.pop(rec.output.uid, None)
            if g_out is None:
                continue
            for t, g in zip(rec.inputs, rec.backward(g_out)):
                if g is None or not t.requires_grad:
                    continue
                g = np.asarray(g, dtype=np.float64)
                if t.op is None:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += g.reshape(t.data.shape)
                else:
                    held = flowing.get(t.uid)
                    flowing[t.uid] = g if held is None else held + g


class Param:
    """Named learnable tensor. grad always exists and matches value's shape."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value):
        self.name = name
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.value.requires_grad = True
        self.value.grad = np.zeros_like(self.value.data)

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    def zero_grad(self) -> None:
        self.value.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


def _astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _apply(op: str, inputs: tuple, out_data: np.ndarray, backward: Callable) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericsError(f"{op} produced non-finite values")
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = current_tape()
    if tape is not None and out.requires_grad:
        out.op = op
        tape.records.append(TapeRecord(op, inputs, out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = _astensor(a), _astensor(b)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _apply("add", (a, b), a.data + b.data, backward)


def sub(a, b) -> Tensor:
    a, b = _astensor(a), _astensor(b)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _apply("sub", (a, b), a.data - b.data, backward)


def mul(a, b) -> Tensor:
    a, b = _astensor(a), _astensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _apply("mul", (a, b), ad * bd, backward)


def pow_const(a, exponent: float) -> Tensor:
    """a ** exponent for a fixed real exponent (fractional powers need a > 0)."""
    a = _astensor(a)
    ad = a.data

    def backward(g):
        return (g * exponent * ad ** (exponent - 1.0),)

    return _apply("pow", (a,), ad ** float(exponent), backward)


def sqrt(a) -> Tensor:
    return pow_const(a, 0.5)


def texp(a) -> Tensor:
    a = _astensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _apply("exp", (a,), out, backward)


def tlog(a) -> Tensor:
    a = _astensor(a)
    ad = a.data

    def backward(g):
        return (g / ad,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _apply("log", (a,), out, backward)


def tanh(a) -> Tensor:
    a = _astensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _apply("tanh", (a,), out, backward)


def relu(a) -> Tensor:
    a = _astensor(a)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _apply("relu", (a,), np.where(mask, a.data, 0.0), backward)


def matmul(a, b) -> Tensor:
    a, b = _astensor(a), _astensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {ad.shape} @ {bd.shape}")

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _apply("matmul", (a, b), ad @ bd, backward)


def transpose(a) -> Tensor:
    a = _astensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.data.shape}")

    def backward(g):
        return (g.T,)

    return _apply("transpose", (a,), a.data.T.copy(), backward)


def reshape(a, shape) -> Tensor:
    a = _astensor(a)
    orig = a.data.shape

    def backward(g):
        return (g.reshape(orig),)

    return _apply("reshape", (a,), a.data.reshape(shape).copy(), backward)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = tuple(_astensor(p) for p in parts)
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, bounds, axis=axis))

    return _apply("concat", parts, np.concatenate([p.data for p in parts], axis=axis), backward)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _astensor(a)
    ad = a.data
    if not (0 <= start < stop <= ad.shape[0]):
        raise DimensionError(f"row slice [{start}:{stop}] out of range for shape {ad.shape}")

    def backward(g):
        full = np.zeros_like(ad)
        full[start:stop] = g
        return (full,)

    return _apply("slice_rows", (a,), ad[start:stop].copy(), backward)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _astensor(a)
    ad = a.data

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ad.shape).copy(),)

    return _apply("sum", (a,), ad.sum(axis=axis, keepdims=keepdims), backward)


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _astensor(a)
    ad = a.data
    n = ad.size if axis is None else ad.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy() / n,)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ad.shape).copy() / n,)

    return _apply("mean", (a,), ad.mean(axis=axis, keepdims=keepdims), backward)


def _check_axis(arr: np.ndarray, axis: int) -> None:
    if not (-arr.ndim <= axis < arr.ndim):
        raise DimensionError(f"axis {axis} invalid for shape {arr.shape}")


def softmax_axis(a, axis: int) -> Tensor:
    """Softmax along one axis, computed with max subtraction for stability."""
    a = _astensor(a)
    _check_axis(a.data, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _apply("softmax", (a,), out, backward)


def log_softmax_axis(a, axis: int) -> Tensor:
    a = _astensor(a)
    _check_axis(a.data, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _apply("log_softmax", (a,), out, backward)


# ---------------------------------------------------------------------------
# layers


def affine(x, w: Param, b: Param) -> Tensor:
    """y = x @ W + b with b broadcast over rows."""
    x = _astensor(x)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(f"affine: x {x.data.shape} vs W {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise DimensionError(f"affine: b {b.data.shape} vs W {w.data.shape}")
    return add(matmul(x, w.value), b.value)


@dataclass
class RunningStats:
    """Exponential-moving-average batch-norm statistics, one value per feature."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, width: int) -> "RunningStats":
        return cls(mean=np.zeros(width), var=np.ones(width))

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, momentum: float) -> None:
        self.mean = (1.0 - momentum) * self.mean + momentum * batch_mean
        self.var = (1.0 - momentum) * self.var + momentum * batch_var


def batch_norm(
    x,
    gamma: Param,
    beta: Param,
    running: RunningStats,
    mode: str,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Normalize columns of a batch-by-feature matrix.

    Train mode uses the batch's own mean / population variance and folds them
    into the running statistics; eval mode normalizes with the running values.
    """
    x = _astensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"batch_norm needs 2-D input, got {x.data.shape}")
    if mode == TRAIN:
        if x.data.shape[0] < 2:
            raise DegenerateBatchError("batch_norm needs at least 2 rows in train mode")
        mu = tmean(x, axis=0, keepdims=True)
        dev = sub(x, mu)
        var = tmean(mul(dev, dev), axis=0, keepdims=True)
        running.update(mu.data[0].copy(), var.data[0].copy(), momentum)
        inv = pow_const(add(var, eps), -0.5)
        xhat = mul(dev, inv)
    elif mode == EVAL:
        inv = 1.0 / np.sqrt(running.var + eps)
        xhat = mul(sub(x, running.mean[None, :]), inv[None, :])
    else:
        raise UsageError(f"unknown mode {mode!r}")
    return add(mul(xhat, gamma.value), beta.value)


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-rate), eval is identity."""
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    x = _astensor(x)
    if mode == EVAL or rate == 0.0:
        return x
    if mode != TRAIN:
        raise UsageError(f"unknown mode {mode!r}")
    if rng is None:
        raise UsageError("train-mode dropout needs a random generator")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(mask))


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], Tensor], params: Sequence[Param], step: float = 1e-6) -> float:
    """Compare analytic gradients of f() against central finite differences.

    Returns the maximum elementwise relative error |a-n| / max(|a|, |n|, 1e-12)
    over every entry of every parameter.
    """
    if step <= 0:
        raise ConfigError("finite-difference step must be positive")
    zero_grads(params)
    with Tape() as tape:
        tape.backward(f())
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat = p.value.data.reshape(-1)
        gflat = grads.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = f().item()
            flat[i] = saved - step
            lo = f().item()
            flat[i] = saved
            numeric = (hi - lo) / (2.0 * step)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
