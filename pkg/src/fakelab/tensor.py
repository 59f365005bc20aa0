"""Dense tensors with reverse-mode automatic differentiation.

numpy holds the data; every differentiable op records a closure mapping the
output gradient back to input gradients, and ``backward`` replays them in
reverse topological order. float32 is the working precision (~7 digits);
gradient checking runs the same graphs in float64 (~15 digits) so central
differences are not drowned by rounding noise.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

LOG_EPS = 1e-8
LN_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes do not fit the operation."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class DomainError(ValueError):
    """Input outside the mathematical domain of the op."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / frozen paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense array plus an optional same-shape gradient buffer.

    Data is treated as immutable once the tensor participates in a graph;
    only gradient buffers and explicit optimizer updates mutate state, so
    independent graphs can be evaluated concurrently.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, (np.ndarray, np.generic)):
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad.

        self must be scalar. Repeated calls without zeroing add up.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            if node._parents:
                node.grad = np.zeros_like(node.data)
            elif node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None:
                    continue
                if parent.requires_grad or parent._parents:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += g

    # Operator sugar; the named functions below are the real surface.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _node(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _sum_to_vector(g: np.ndarray, dim: int) -> np.ndarray:
    """Collapse all leading axes, leaving a length-``dim`` vector."""
    return g.reshape(-1, dim).sum(axis=0)


# ---------------------------------------------------------------------------
# elementwise / pointwise ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(out, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        return (g * c,)

    return _node(a.data * c, (a,), bw)


def gelu(a) -> Tensor:
    """tanh-approximation GELU."""
    a = as_tensor(a)
    x = a.data
    c = math.sqrt(2.0 / math.pi)
    k = 0.044715
    inner = c * (x + k * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x)
        return (g * d,)

    return _node(out, (a,), bw)


def log_clamped(a) -> Tensor:
    """log(max(x, 1e-8)); rejects negative inputs outright."""
    a = as_tensor(a)
    if (a.data < 0).any():
        raise DomainError("log_clamped: negative input")
    clipped = np.maximum(a.data, LOG_EPS)
    out = np.log(clipped)

    def bw(g):
        return (g * np.where(a.data > LOG_EPS, 1.0 / clipped, 0.0),)

    return _node(out, (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        return (g * _sigmoid(x),)

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.data.shape),)

    return _node(out, (a,), bw)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _node(out, (a,), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    idx = (slice(None),) * (axis % a.ndim) + (slice(start, start + length),)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(out, (a,), bw)


def concat(parts: Sequence, axis: int) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(out, parts, bw)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum())

    def bw(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)

    return _node(out, (a,), bw)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# linear algebra / attention kernels


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions do not broadcast, {a.shape} x {b.shape}")

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node(out, (a, b), bw)


def softmax_rows(a) -> Tensor:
    """Row softmax over the last axis, max-subtracted for stability."""
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise NumericError("softmax_rows: NaN in input")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) * y,)

    return _node(y, (a,), bw)


def log_softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise NumericError("log_softmax_rows: NaN in input")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _node(out, (a,), bw)


def layer_norm(a, gain, shift) -> Tensor:
    """Normalize each trailing vector to mean 0 / var 1, then gain*x + shift.

    Epsilon sits inside the variance square root, so a constant vector maps
    to the shift instead of dividing by zero.
    """
    a, gain, shift = as_tensor(a), as_tensor(gain), as_tensor(shift)
    d = a.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/shift must be ({d},), got {gain.shape} and {shift.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    normed = centered * inv
    out = gain.data * normed + shift.data

    def bw(g):
        dgain = _sum_to_vector(g * normed, d)
        dshift = _sum_to_vector(g, d)
        dn = g * gain.data
        dx = (inv / d) * (
            d * dn
            - dn.sum(axis=-1, keepdims=True)
            - normed * (dn * normed).sum(axis=-1, keepdims=True)
        )
        return dx, dgain.astype(gain.data.dtype), dshift.astype(shift.data.dtype)

    return _node(out, (a, gain, shift), bw)


# ---------------------------------------------------------------------------
# indexing ops


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; gradient scatter-adds back into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    out = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _node(out, (table,), bw)


def gather_last(a, ids: np.ndarray) -> Tensor:
    """out[...] = a[..., ids[...]]; one entry per trailing row."""
    a = as_tensor(a)
    ids = np.asarray(ids)
    out = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, ids[..., None], g[..., None], axis=-1)
        return (ga,)

    return _node(out, (a,), bw)


def select_entries(a, index_arrays: tuple) -> Tensor:
    """Advanced-index a[index_arrays]; gradient scatter-adds at those entries."""
    a = as_tensor(a)
    out = a.data[index_arrays]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index_arrays, g)
        return (ga,)

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], Tensor], wrt: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` rebuilds the scalar loss from the tensors in ``wrt`` (perturbed in
    place), which must be float64: float32 cancellation would swamp the
    1e-4 tolerance this check is meant to enforce.
    Relative error uses denominator max(|fd|, |analytic|, 1e-8).
    """
    for t in wrt:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 tensors")
        if not t.requires_grad:
            raise ValueError("grad_check: every checked tensor must require grad")
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [np.array(t.grad) for t in wrt]
    worst = 0.0
    with no_grad():
        for t, ref in zip(wrt, analytic):
            flat = t.data.reshape(-1)
            ref_flat = ref.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up = f().item()
                flat[j] = orig - step
                down = f().item()
                flat[j] = orig
                fd = (up - down) / (2.0 * step)
                err = abs(fd - ref_flat[j]) / max(abs(fd), abs(ref_flat[j]), 1e-8)
                if err > worst:
                    worst = err
    return worst


def sgd_step(params: Sequence[Tensor], lr: float) -> None:
    for p in params:
        if p.grad is not None:
            p.data -= (lr * p.grad).astype(p.data.dtype)


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
