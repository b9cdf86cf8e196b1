"""A small reverse-mode differentiation engine over dense float64 matrices.

Every value is a 2-D array. Binary ops broadcast only along axes of size
one (row vectors, column vectors and 1x1 scalars). Each op records its
parents and a closure that pushes gradients back; ``backward`` walks the
recorded nodes in exact reverse creation order.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

_counter = itertools.count()


class ShapeError(ValueError):
    pass


def _as2d(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got shape {a.shape}")
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as2d(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_counter)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def _raise_scalar(t):
    raise ShapeError(f"item() needs a 1x1 tensor, got {t.shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], back) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        # interior grads are allocated on first accumulation
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = back
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(np.broadcast_to(g, t.shape), dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise ShapeError(f"{op}: incompatible shapes {a} and {b}")
    return tuple(out)


def backward(loss: Tensor):
    """Populate ``.grad`` of every tensor that requires it (accumulating)."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if loss._backward is None:
        raise RuntimeError("backward called on a tensor with no recorded forward ops")
    seen = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in seen:
            continue
        seen[t._id] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    _accum(loss, np.ones((1, 1)))
    for _, t in sorted(seen.items(), reverse=True):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape, "add")

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: _accum(a, -g))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: _accum(a, g * c))


def sigmoid(a: Tensor) -> Tensor:
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    y[~pos] = e / (1.0 + e)
    return _node(y, (a,), lambda g: _accum(a, g * y * (1.0 - y)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: _accum(a, g * mask))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * factor, (a,), lambda g: _accum(a, g * factor))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: _accum(a, g * (1.0 - y * y)))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: _accum(a, g * y))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise FloatingPointError("log of a non-positive value")
    return _node(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _node(y, (a,), lambda g: _accum(a, g * 0.5 / y))


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}, inner dimensions differ")

    def back(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T.copy(), (a,), lambda g: _accum(a, g.T))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    other = 1 - axis
    if len({p.shape[other] for p in parts}) != 1:
        raise ShapeError(f"concat axis={axis}: shapes {[p.shape for p in parts]}")
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, cuts, axis=axis)):
            _accum(p, piece)

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    if axis is None:
        return _node(a.data.sum().reshape(1, 1), (a,), lambda g: _accum(a, np.broadcast_to(g, a.shape)))
    y = a.data.sum(axis=axis, keepdims=True)
    return _node(y, (a,), lambda g: _accum(a, np.broadcast_to(g, a.shape)))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        _accum(a, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _node(y, (a,), back)


def _scatter_matrix(seg: np.ndarray, num_segments: int) -> sparse.csr_matrix:
    """Sparse (num_segments x len(seg)) 0/1 matrix; ``S @ x`` sums rows per segment."""
    return sparse.csr_matrix(
        (np.ones(len(seg)), (seg, np.arange(len(seg)))), shape=(num_segments, len(seg))
    )


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        if a.requires_grad:
            _accum(a, _scatter_matrix(idx, a.shape[0]) @ g)

    return _node(a.data[idx], (a,), back)


def take_cols(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        if a.requires_grad:
            full = np.zeros(a.shape)
            np.add.at(full.T, idx, g.T)
            _accum(a, full)

    return _node(a.data[:, idx], (a,), back)


def segment_sum(a: Tensor, segments, num_segments: int) -> Tensor:
    """Sum rows of ``a`` that share a segment id; row ``k`` of the output
    is the sum over ``segments == k``."""
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != (a.shape[0],):
        raise ShapeError(f"segment_sum: {seg.shape[0]} ids for {a.shape[0]} rows")
    out = _scatter_matrix(seg, num_segments) @ a.data
    return _node(out, (a,), lambda g: _accum(a, g[seg]))


def segment_mean(a: Tensor, segments, num_segments: int) -> Tensor:
    seg = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    inv = 1.0 / np.maximum(counts, 1.0)
    return mul(segment_sum(a, seg, num_segments), Tensor(inv.reshape(-1, 1)))


def segment_softmax(a: Tensor, segments, num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id, independently per column."""
    seg = np.asarray(segments, dtype=np.int64)
    top = np.full((num_segments, a.shape[1]), -np.inf)
    np.maximum.at(top, seg, a.data)
    e = np.exp(a.data - top[seg])
    scatter = _scatter_matrix(seg, num_segments)
    y = e / (scatter @ e)[seg]

    def back(g):
        gy = g * y
        _accum(a, gy - y * (scatter @ gy)[seg])

    return _node(y, (a,), back)


def head_aggregate(
    alpha: Tensor,
    values: Tensor,
    src,
    tgt,
    num_targets: int,
    heads: int,
    width: int,
    lam: Tensor | None = None,
) -> Tensor:
    """Attention-weighted neighbour sums, averaged over heads.

    ``out[t] = (1/heads) * sum_h lam_h * sum_{e: tgt_e = t} alpha[e, h] * values[src_e, block h]``
    where block ``h`` is columns ``h*width:(h+1)*width``. Per-edge value rows
    are never materialised, which keeps memory at node scale.
    """
    src = np.asarray(src, dtype=np.int64)
    tgt = np.asarray(tgt, dtype=np.int64)
    if alpha.shape != (len(src), heads) or values.shape[1] != heads * width:
        raise ShapeError(f"head_aggregate: alpha {alpha.shape}, values {values.shape}, heads={heads}")
    coef = np.full(heads, 1.0 / heads)
    if lam is not None:
        coef = coef * lam.data[0, :heads]
    n_src = values.shape[0]
    mats = [
        sparse.csr_matrix((alpha.data[:, h], (tgt, src)), shape=(num_targets, n_src)) for h in range(heads)
    ]
    out = np.zeros((num_targets, width))
    for h in range(heads):
        out += coef[h] * (mats[h] @ values.data[:, h * width : (h + 1) * width])

    def back(g):
        g_tgt = g[tgt]
        g_values = np.zeros(values.shape)
        g_alpha = np.zeros(alpha.shape)
        g_lam = np.zeros((1, lam.shape[1])) if lam is not None else None
        for h in range(heads):
            block = slice(h * width, (h + 1) * width)
            g_values[:, block] = coef[h] * (mats[h].T @ g)
            inner = np.einsum("ij,ij->i", values.data[src, block], g_tgt)
            g_alpha[:, h] = coef[h] * inner
            if lam is not None:
                g_lam[0, h] = float(alpha.data[:, h] @ inner) / heads
        _accum(values, g_values)
        _accum(alpha, g_alpha)
        if lam is not None:
            _accum(lam, g_lam)

    parents = (alpha, values) if lam is None else (alpha, values, lam)
    return _node(out, parents, back)


def repeat_cols(a: Tensor, times: int) -> Tensor:
    """Repeat each column ``times`` times: (r, h) -> (r, h*times)."""

    def back(g):
        _accum(a, g.reshape(a.shape[0], a.shape[1], times).sum(axis=2))

    return _node(np.repeat(a.data, times, axis=1), (a,), back)


def block_sum_cols(a: Tensor, block: int) -> Tensor:
    """Sum consecutive column blocks of width ``block``: (r, h*block) -> (r, h)."""
    r, c = a.shape
    if c % block:
        raise ShapeError(f"block_sum_cols: {c} columns not divisible by {block}")

    def back(g):
        _accum(a, np.repeat(g, block, axis=1))

    return _node(a.data.reshape(r, c // block, block).sum(axis=2), (a,), back)


# ---------------------------------------------------------------- optimisers


class Optimizer:
    def __init__(self, params: Iterable[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def _check(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name or p}")


class SGD(Optimizer):
    def step(self):
        self._check()
        for p in self.params:
            p.data -= self.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self._check()
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad**2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [x.copy() for x in self.m], "v": [x.copy() for x in self.v]}


def make_optimizer(scheme: str, params, lr: float) -> Optimizer:
    if scheme == "sgd":
        return SGD(params, lr)
    if scheme == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {scheme!r}")


# ---------------------------------------------------------------- checking


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference grads.

    Error per tensor is ``|a - n| / max(|a|, |n|)`` in the 2-norm; tensors
    whose gradients are both zero contribute 0.
    """
    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = fn().item()
            flat[k] = orig - eps
            down = fn().item()
            flat[k] = orig
            num.reshape(-1)[k] = (up - down) / (2 * eps)
        denom = max(np.linalg.norm(a), np.linalg.norm(num))
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(a - num) / denom))
    for p in params:
        p.zero_grad()
    return worst


def is_finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))


