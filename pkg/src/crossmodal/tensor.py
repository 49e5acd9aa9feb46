"""Dense float64 tensors with reverse-mode differentiation.

Storage is a row-major numpy array (always float64; serialized formats
store float32 and promote on load). Ops build an implicit DAG: every
result holds its parent tensors and a vjp closure, and node ids increase
monotonically at creation, so creation order is a topological order by
construction. `backward` walks that order in reverse.

Gradients are accumulated only on leaves (tensors created directly with
requires_grad=True); intermediates keep theirs in a transient dict.
Tensors are treated as immutable after construction; the optimizer is the
only writer of leaf `.data` buffers, between graph builds.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ParameterError, ShapeError
from .rng import generator

_NODE_IDS = itertools.count()


class FlopCounter:
    """Analytic flop tally, enabled by the profiler.

    Convention: matmul costs 2*m*k*n per matrix pair (times the broadcast
    batch size); every elementwise op costs one flop per output element;
    reductions cost one flop per input element; data movement (reshape,
    transpose, concat, gather) is free.
    """

    def __init__(self):
        self.enabled = False
        self.total = 0

    def add(self, n: int) -> None:
        if self.enabled:
            self.total += n

    def start(self) -> None:
        self.enabled = True
        self.total = 0

    def stop(self) -> int:
        self.enabled = False
        return self.total


FLOPS = FlopCounter()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._node_id = next(_NODE_IDS)

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _non_scalar(self)

    def detach(self) -> "Tensor":
        """A graph-free view of the same values."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; `other` may be a scalar or array
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return slice_(self, key)


def _non_scalar(t: Tensor):
    raise ContractError(f"expected a scalar tensor, got shape {t.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor, leaves: Sequence[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every requires_grad leaf.

    `loss` must be scalar. Leaves listed in `leaves` that do not
    participate in the graph receive an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    pending: dict[int, np.ndarray] = {loss._node_id: np.ones_like(loss.data)}
    by_id: dict[int, Tensor] = {loss._node_id: loss}
    # creation order is topological, so visiting by descending id visits
    # every node after all of its consumers
    frontier = [loss._node_id]
    seen = {loss._node_id}
    stack = [loss]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.requires_grad and p._node_id not in seen:
                seen.add(p._node_id)
                by_id[p._node_id] = p
                stack.append(p)
    del frontier
    for nid in sorted(seen, reverse=True):
        node = by_id[nid]
        g = pending.pop(nid, None)
        if g is None:
            continue
        if node._vjp is not None:
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = parent._node_id
                if pid in pending:
                    pending[pid] = pending[pid] + pg
                else:
                    pending[pid] = pg
        elif node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
    if leaves is not None:
        for leaf in leaves:
            if leaf.requires_grad and leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    FLOPS.add(data.size)
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    FLOPS.add(data.size)
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a: Tensor) -> Tensor:
    FLOPS.add(a.size)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    FLOPS.add(data.size)
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    FLOPS.add(data.size)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    data = np.matmul(a.data, b.data)
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    FLOPS.add(2 * m * k * n * int(np.prod(data.shape[:-2], dtype=np.int64)))

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(data, (a, b), vjp)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    FLOPS.add(data.size)
    return _make(data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    FLOPS.add(a.size)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    FLOPS.add(data.size)
    return _make(data, (a,), lambda g: (g * 0.5 / data,))


def relu(a: Tensor) -> Tensor:
    FLOPS.add(a.size)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails: exp of a non-positive argument only
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    FLOPS.add(data.size)
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),))


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    FLOPS.add(a.size)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, (a,), vjp)


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else a.size // data.size
    FLOPS.add(a.size + data.size)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# shape ops (free of flops)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swap_last_axes(a: Tensor) -> Tensor:
    return _make(
        np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(data, tuple(tensors), vjp)


def slice_(a: Tensor, key) -> Tensor:
    data = a.data[key]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    return _make(data, (a,), vjp)


def index_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows (axis 0) by an integer index array; rows may repeat."""
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(data, (a,), vjp)


def take_pairs(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather matrix entries a[rows[i], cols[i]] into a vector."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    data = a.data[rows, cols]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g)
        return (ga,)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# composites


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, stabilized by (detached) row-max subtraction.

    Finite input is the caller's obligation; non-finite values propagate
    as NaN so training loops can abort with context.
    """
    rowmax = Tensor(a.data.max(axis=-1, keepdims=True))
    e = exp(sub(a, rowmax))
    return div(e, sum_(e, axis=-1, keepdims=True))


def logsumexp_rows(a: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """log(sum(exp(...))) along the last axis, max-stabilized.

    `additive_mask` (0 where included, -inf where excluded) selects a
    subset per row; each row must keep at least one finite entry.
    """
    z = add(a, Tensor(additive_mask)) if additive_mask is not None else a
    rowmax = z.data.max(axis=-1, keepdims=True)
    # an all-masked row (-inf max) is a caller bug; NaN is left to flow so
    # training loops can surface it as a numeric abort with context
    if np.isneginf(rowmax).any():
        raise ContractError("logsumexp_rows: a row has no included entries")
    stabilized = sub(z, Tensor(rowmax))
    lse = log(sum_(exp(stabilized), axis=-1))
    return add(lse, Tensor(rowmax[..., 0]))


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    mu = mean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(centered, sqrt(add(var, Tensor(eps))))
    return add(mul(inv, gamma), beta)


def dropout(a: Tensor, p: float, seed: int, train_mode: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Eval mode (and p == 0) is the identity. The mask is a pure function of
    the seed.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    if not train_mode or p == 0.0:
        return a
    keep = generator(seed).random(a.shape) >= p
    mask = Tensor(keep.astype(np.float64) / (1.0 - p))
    return mul(a, mask)


def l2_normalize_rows(a: Tensor, guard: Callable[[int], None] | None = None) -> Tensor:
    """Scale each row (last axis) to unit L2 norm.

    Rows with norm below 1e-12 are replaced by the first basis vector
    instead of dividing by ~0; `guard` is called with the number of rows
    that needed the fallback.
    """
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    degenerate = norms < 1e-12
    n_bad = int(degenerate.sum())
    if n_bad == 0:
        return div(a, sqrt(sum_(mul(a, a), axis=-1, keepdims=True)))
    if guard is not None:
        guard(n_bad)
    keep = (~degenerate).astype(np.float64)
    safe = div(a, sqrt(add(sum_(mul(a, a), axis=-1, keepdims=True), Tensor(degenerate.astype(np.float64)))))
    e1 = np.zeros(a.shape, dtype=np.float64)
    e1[..., 0] = 1.0
    return add(mul(safe, Tensor(keep)), Tensor(e1 * degenerate))


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d_k)) V over the last two axes, no mask.

    Accepts (t, d_k) matrices or any batched (..., t, d_k) stack; all
    tokens attend to all tokens.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention needs equal shapes, got {q.shape}, {k.shape}, {v.shape}")
    d_k = q.shape[-1]
    if d_k == 0:
        raise ParameterError("attention requires d_k >= 1")
    if q.shape[-2] < 1:
        raise ParameterError("attention requires at least one token")
    scores = div(matmul(q, swap_last_axes(k)), Tensor(math.sqrt(d_k)))
    return matmul(softmax_rows(scores), v)
