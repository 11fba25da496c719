"""Immutable float64 tensors with reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. :func:`backward`
walks that graph once in reverse topological order.

Broadcasting is deliberately narrow: two operands must have equal shapes, or
one must be a scalar, or the shorter shape must equal the trailing part of the
longer one (broadcast over leading batch axes only).
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


GradFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "parents", "grad_fn", "op")
    __array_ufunc__ = None  # make numpy defer to the reflected operators below

    def __init__(self, data, parents: tuple["Tensor", ...] = (), grad_fn: GradFn | None = None,
                 op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)  # always a private copy
        arr.setflags(write=False)
        self.data = arr
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents, grad_fn, op) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op} (numeric overflow)")
    out = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=np.float64)
    if not data.flags.c_contiguous or data.base is not None:
        data = data.copy()
    data.setflags(write=False)
    out.data = data
    out.parents = parents
    out.grad_fn = grad_fn
    out.op = op
    return out


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b or a == () or b == ():
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise ShapeError(f"{op}: incompatible shapes {a} and {b} "
                     "(only leading batch axes may broadcast)")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))) if lead else grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                   "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _result(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


# ----------------------------------------------------------------- reductions

def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    # ravel + np.add.reduce on a contiguous buffer keeps a fixed reduction order
    return _result(np.add.reduce(a.data.ravel()), (a,),
                   lambda g: (np.full(shape, float(g)),), "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return mul(sum(a), 1.0 / n)


# -------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics restricted to what the models use.

    ``a`` may carry leading batch axes; ``b`` is a vector, a matrix, or has
    the same batch axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and (b.ndim != a.ndim or b.shape[:-2] != a.shape[:-2]):
        raise ShapeError(f"matmul: batch axes differ, shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        if bd.ndim == 1:
            ga = g[..., None] * bd
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1)
        elif bd.ndim == 2:
            ga = g @ bd.T
            if ad.ndim == 1:
                gb = np.outer(ad, g)
            else:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = g @ np.swapaxes(bd, -1, -2)
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), grad_fn, "matmul")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 axes, got shape {a.shape}")
    return _result(np.swapaxes(a.data, -1, -2), (a,),
                   lambda g: (np.swapaxes(g, -1, -2),), "transpose")


# ------------------------------------------------------------- restructuring

def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), grad_fn, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} disagree off axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _result(np.concatenate([t.data for t in ts], axis=ax), tuple(ts),
                   lambda g: tuple(np.split(g, splits, axis=ax)), "concat")


def broadcast_batch(a, batch: int) -> Tensor:
    """Repeat ``a`` along a new leading batch axis."""
    a = as_tensor(a)
    out = np.broadcast_to(a.data, (batch,) + a.shape)
    return _result(out, (a,), lambda g: (g.sum(axis=0),), "broadcast_batch")


def pair_sum(u, v) -> Tensor:
    """``out[..., i, j] = u[..., i] + v[..., j]`` for equally shaped ``u``, ``v``."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise ShapeError(f"pair_sum: shapes {u.shape} and {v.shape} differ")
    return _result(u.data[..., :, None] + v.data[..., None, :], (u, v),
                   lambda g: (g.sum(axis=-1), g.sum(axis=-2)), "pair_sum")


def masked_softmax(logits, mask) -> Tensor:
    """Softmax over the last axis restricted to entries where ``mask`` is set.

    Masked-out entries are exactly zero. Each row must keep at least one entry.
    The row maximum over the kept entries is subtracted before exponentiating.
    """
    logits = as_tensor(logits)
    m = np.asarray(mask, dtype=bool)
    _check_broadcast(logits.shape, m.shape, "masked_softmax")
    m = np.broadcast_to(m, logits.shape)
    if not m.any(axis=-1).all():
        raise ValueError("masked_softmax: a row has no unmasked entry")
    x = np.where(m, logits.data, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(x), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _result(p, (logits,), grad_fn, "masked_softmax")


# ------------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

    Tensors in ``wrt`` that ``loss`` does not depend on get zero gradients.
    """
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None) if node.grad_fn is not None else grads.get(id(node))
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
    return {name: np.array(grads.get(id(t), np.zeros(t.shape)), dtype=np.float64).reshape(t.shape)
            for name, t in wrt.items()}


def parameters(arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in arrays.items()}


def zeros(shape: Iterable[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)))


def ones(shape: Iterable[int]) -> Tensor:
    return Tensor(np.ones(tuple(shape)))
