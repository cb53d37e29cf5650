"""Dense float64 tensors with a reverse-mode gradient tape, plus the small
linear-algebra kernels the rest of the package builds on.

A :class:`Tensor` wraps a numpy array.  Every operation that involves at
least one gradient-tracked operand records a tape node (the output tensor
itself, holding its parents and a vector-Jacobian closure).  Calling
:func:`backward` on a scalar walks the tape once in reverse topological
order and accumulates gradients additively, so fan-out is handled
naturally.  Tapes are built per forward pass and garbage-collected with
the tensors; nothing is retained between passes.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

Array = np.ndarray


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """A float64 array plus optional tape bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), vjp: Callable | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.op = op
        self.parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        return float(self.data.reshape(()))


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _tracked(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t.parents for t in tensors)


def _node(data: Array, op: str, parents: tuple, vjp: Callable) -> Tensor:
    if _tracked(*[p for p in parents if isinstance(p, Tensor)]):
        return Tensor(data, requires_grad=False, op=op, parents=parents, vjp=vjp)
    return Tensor(data, requires_grad=False, op=op)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise and linear ops -----------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, "sub", (a, b), vjp)


def neg(a) -> Tensor:
    a = _coerce(a)

    def vjp(g):
        return (-g,)

    return _node(-a.data, "neg", (a,), vjp)


def mul(a, b) -> Tensor:
    """Elementwise product; either operand may be a constant array/scalar."""
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _node(out, "mul", (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, "matmul", (a, b), vjp)


def transpose(a) -> Tensor:
    a = _coerce(a)

    def vjp(g):
        return (g.T,)

    return _node(a.data.T, "transpose", (a,), vjp)


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _node(a.data * mask, "relu", (a,), vjp)


def exp(a) -> Tensor:
    a = _coerce(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _node(out, "exp", (a,), vjp)


def log(a) -> Tensor:
    a = _coerce(a)

    def vjp(g):
        return (g / a.data,)

    return _node(np.log(a.data), "log", (a,), vjp)


def square(a) -> Tensor:
    a = _coerce(a)

    def vjp(g):
        return (2.0 * a.data * g,)

    return _node(a.data * a.data, "square", (a,), vjp)


def absolute(a) -> Tensor:
    a = _coerce(a)
    sign = np.sign(a.data)

    def vjp(g):
        return (g * sign,)

    return _node(np.abs(a.data), "abs", (a,), vjp)


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, "concat", tuple(ts), vjp)


def total(a) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    a = _coerce(a)

    def vjp(g):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _node(np.asarray(a.data.sum()), "sum", (a,), vjp)


def mean(a) -> Tensor:
    a = _coerce(a)
    n = a.data.size

    def vjp(g):
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return _node(np.asarray(a.data.mean()), "mean", (a,), vjp)


# -- indexing / segment ops ---------------------------------------------

def gather_rows(a, index: Array) -> Tensor:
    """Rows ``a[index]``; the adjoint scatter-adds back over duplicates."""
    a = _coerce(a)
    index = np.asarray(index, dtype=np.intp)

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, index, g)
        return (z,)

    return _node(a.data[index], "gather_rows", (a,), vjp)


def segment_sum(a, segment_ids: Array, num_segments: int) -> Tensor:
    """Per-segment row sums; empty segments yield zero rows."""
    a = _coerce(a)
    seg = np.asarray(segment_ids, dtype=np.intp)
    out = np.zeros((num_segments,) + a.data.shape[1:], dtype=np.float64)
    np.add.at(out, seg, a.data)

    def vjp(g):
        return (g[seg],)

    return _node(out, "segment_sum", (a,), vjp)


def segment_mean(a, segment_ids: Array, num_segments: int) -> Tensor:
    a = _coerce(a)
    seg = np.asarray(segment_ids, dtype=np.intp)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    scale = 1.0 / np.maximum(counts, 1.0)
    summed = segment_sum(a, seg, num_segments)
    return mul(summed, scale[:, None] if a.data.ndim > 1 else scale)


def segment_max(a, segment_ids: Array, num_segments: int) -> Tensor:
    """Per-segment max; empty segments yield zeros (the -inf guard).

    The adjoint routes the gradient to the first row attaining the max in
    each segment/column, which keeps backward deterministic under ties.
    """
    a = _coerce(a)
    seg = np.asarray(segment_ids, dtype=np.intp)
    data = a.data
    if data.ndim != 2:
        raise ValidationError("segment_max expects a 2-D tensor")
    n_rows, n_cols = data.shape
    raw = np.full((num_segments, n_cols), -np.inf)
    np.maximum.at(raw, seg, data)
    out = np.where(np.isfinite(raw), raw, 0.0)

    def vjp(g):
        hit = data == raw[seg]
        row_ids = np.arange(n_rows, dtype=np.intp)[:, None]
        first = np.full((num_segments, n_cols), n_rows, dtype=np.intp)
        np.minimum.at(first, seg, np.where(hit, row_ids, n_rows))
        z = np.zeros_like(data)
        valid = first < n_rows
        seg_idx, col_idx = np.nonzero(valid)
        z[first[seg_idx, col_idx], col_idx] += g[seg_idx, col_idx]
        return (z,)

    return _node(out, "segment_max", (a,), vjp)


def segment_min(a, segment_ids: Array, num_segments: int) -> Tensor:
    return neg(segment_max(neg(a), segment_ids, num_segments))


def pick(a, rows: Array, cols: Array) -> Tensor:
    """Entries ``a[rows[i], cols[i]]`` as a 1-D tensor."""
    a = _coerce(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, (rows, cols), g)
        return (z,)

    return _node(a.data[rows, cols], "pick", (a,), vjp)


# -- softmax --------------------------------------------------------------

def softmax_rows(m):
    """Row-wise softmax.

    Accepts a plain array (returns an array) or a :class:`Tensor`
    (returns a tape-tracked tensor).  Each output row is non-negative and
    sums to one; adding a constant to a row leaves its output unchanged.
    """
    if isinstance(m, Tensor):
        out = _softmax_kernel(m.data)

        def vjp(g):
            inner = (g * out).sum(axis=1, keepdims=True)
            return (out * (g - inner),)

        return _node(out, "softmax_rows", (m,), vjp)
    return _softmax_kernel(_validate_finite(m, "softmax_rows"))


def _softmax_kernel(m: Array) -> Array:
    z = m - m.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(a) -> Tensor:
    a = _coerce(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _node(out, "log_softmax_rows", (a,), vjp)


def _validate_finite(m, name: str) -> Array:
    arr = _as_array(m)
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name}: non-finite input")
    return arr


# -- reverse pass ---------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar `loss` into every reachable tensor.

    Gradients of tensors created with ``requires_grad=True`` end up in
    their ``.grad`` attribute (added to any existing value, so call
    :func:`zero_grads` between passes).
    """
    if loss.data.size != 1:
        raise ValidationError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Tensor) and (p.requires_grad or p.parents):
                stack.append((p, False))

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not isinstance(p, Tensor):
                continue
            if not (p.requires_grad or p.parents):
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params) -> None:
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


# -- initialization -------------------------------------------------------

def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> Array:
    """Symmetric uniform init with limit sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# -- symmetric eigensolver -------------------------------------------------

def sym_eigendecompose(a: Array) -> tuple[Array, Array]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric
    matrix, via cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below 1e-12,
    with a hard cap of 100 sweeps.  The decomposition satisfies
    ``a @ v[:, i] == w[i] * v[:, i]`` to 1e-8 * max(1, ||a||_F) and is
    bit-reproducible for identical input.
    """
    a = _as_array(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    asym = float(np.abs(a - a.T).max()) if a.size else 0.0
    if asym > 1e-10:
        raise ValidationError(f"matrix is not symmetric: max asymmetry {asym:.3e}")

    n = a.shape[0]
    mat = a.astype(np.float64).copy()
    vec = np.eye(n)
    if n == 1:
        return mat.diagonal().copy(), vec

    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(100):
        off = math.sqrt(float((mat[off_mask] ** 2).sum()))
        if off < 1e-12:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = mat[p, q]
                if abs(apq) < 1e-280:  # far below the convergence floor
                    continue
                tau = (mat[q, q] - mat[p, p]) / (2.0 * apq)
                if abs(tau) > 1e150:  # sqrt(1 + tau^2) would overflow
                    t = 0.5 / tau
                elif tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p = mat[:, p].copy()
                col_q = mat[:, q].copy()
                mat[:, p] = c * col_p - s * col_q
                mat[:, q] = s * col_p + c * col_q
                row_p = mat[p, :].copy()
                row_q = mat[q, :].copy()
                mat[p, :] = c * row_p - s * row_q
                mat[q, :] = s * row_p + c * row_q
                vp = vec[:, p].copy()
                vec[:, p] = c * vp - s * vec[:, q]
                vec[:, q] = s * vp + c * vec[:, q]

    eigenvalues = mat.diagonal().copy()
    order = np.argsort(eigenvalues, kind="stable")
    return eigenvalues[order], vec[:, order]
