"""Rank-4 double-precision tensors and a tape of backward rules.

Operations record themselves on the innermost active :class:`Graph` when at
least one input requires a gradient. Outside a graph they only compute, which
is how inference and finite-difference probes run.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphStateError(RuntimeError):
    """A graph was used after its backward pass consumed it."""


class ContractError(ValueError):
    """A precondition other than shape agreement failed."""


_local = threading.local()


def _stack():
    if not hasattr(_local, "graphs"):
        _local.graphs = []
    return _local.graphs


def active_graph():
    s = _stack()
    return s[-1] if s else None


@dataclass
class _Node:
    inputs: tuple
    output: object
    rule: Callable


class Graph:
    """Ordered tape of operations recorded while the graph is active.

    Use as a context manager, then call :meth:`backward` once on a scalar.
    Graphs are per-thread; two threads may each run their own.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()
        self.consumed = False

    def __enter__(self):
        if self.consumed:
            raise GraphStateError("graph already consumed by backward()")
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False

    def record(self, inputs, output, rule):
        if self.consumed:
            raise GraphStateError("cannot record on a consumed graph")
        self.nodes.append(_Node(tuple(inputs), output, rule))
        self._produced.add(id(output))

    def leaves(self):
        seen = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and id(t) not in self._produced:
                    seen.setdefault(id(t), t)
        return list(seen.values())

    def backward(self, loss):
        if self.consumed:
            raise GraphStateError("backward() already ran on this graph")
        if not isinstance(loss, Tensor) or loss.shape != (1, 1, 1, 1):
            raise ContractError(f"loss must be a (1,1,1,1) tensor, got {getattr(loss, 'shape', loss)}")
        grads = {id(loss): np.ones((1, 1, 1, 1))}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            contribs = node.rule(g)
            for t, gi in zip(node.inputs, contribs):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for leaf in self.leaves():
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        self.consumed = True
        self.nodes = []
        self._produced = set()


def backward(graph: Graph, loss: "Tensor"):
    graph.backward(loss)


def emit(out, inputs: Sequence, rule):
    """Attach ``rule`` for ``out`` to the active graph if any input needs a gradient."""
    g = active_graph()
    if g is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        g.record(inputs, out, rule)
    return out


class Tensor:
    """Dense (n, c, h, w) float64 array with an optional gradient slot."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank 4, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return div(full(self.shape, float(other)), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, int(p))


def _shape4(shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or any(s < 0 for s in shape):
        raise ShapeError(f"shape must be four non-negative integers, got {shape}")
    return shape


def zeros(shape):
    return Tensor(np.zeros(_shape4(shape)))


def full(shape, value):
    return Tensor(np.full(_shape4(shape), float(value)))


def from_values(shape, values):
    shape = _shape4(shape)
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if vals.size != int(np.prod(shape)):
        raise ShapeError(f"{vals.size} values do not fill shape {shape}")
    return Tensor(vals.reshape(shape).copy())


def constant(array):
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(np.array(array, dtype=np.float64))


def _same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    _same(a, b, "add")
    return emit(Tensor(a.data + b.data), (a, b), lambda g: (g, g))


def sub(a, b):
    _same(a, b, "sub")
    return emit(Tensor(a.data - b.data), (a, b), lambda g: (g, -g))


def mul(a, b):
    _same(a, b, "mul")
    ad, bd = a.data, b.data
    return emit(Tensor(ad * bd), (a, b), lambda g: (g * bd, g * ad))


def div(a, b):
    _same(a, b, "div")
    ad, bd = a.data, b.data
    q = ad / bd
    return emit(Tensor(q), (a, b), lambda g: (g / bd, -g * q / bd))


def neg(a):
    return emit(Tensor(-a.data), (a,), lambda g: (-g,))


def scale(a, s):
    s = float(s)
    return emit(Tensor(a.data * s), (a,), lambda g: (g * s,))


def shift(a, s):
    """a + s for a constant real s."""
    return emit(Tensor(a.data + float(s)), (a,), lambda g: (g,))


def mul_scalar(a, s):
    """a · s where s is a learnable (1,1,1,1) tensor."""
    if s.shape != (1, 1, 1, 1):
        raise ShapeError(f"mul_scalar: scalar operand has shape {s.shape}")
    ad, sv = a.data, s.data
    return emit(Tensor(ad * sv), (a, s),
                lambda g: (g * sv, np.sum(g * ad).reshape(1, 1, 1, 1)))


def mul_channel(a, gate):
    """Scale every (n, c) plane of ``a`` by gate[n, c, 0, 0]."""
    n, c = a.shape[:2]
    if gate.shape != (n, c, 1, 1):
        raise ShapeError(f"mul_channel: gate shape {gate.shape} != {(n, c, 1, 1)}")
    ad, gd = a.data, gate.data
    return emit(Tensor(ad * gd), (a, gate),
                lambda g: (g * gd, np.sum(g * ad, axis=(2, 3), keepdims=True)))


def minimum(a, b):
    """Elementwise min; a constant float is allowed for ``b``. Ties route to ``a``."""
    if not isinstance(b, Tensor):
        bd = float(b)
        pick = a.data <= bd
        return emit(Tensor(np.where(pick, a.data, bd)), (a,), lambda g: (g * pick,))
    _same(a, b, "minimum")
    pick = a.data <= b.data
    return emit(Tensor(np.where(pick, a.data, b.data)), (a, b),
                lambda g: (g * pick, g * ~pick))


def maximum(a, b):
    """Elementwise max; a constant float is allowed for ``b``. Ties route to ``a``."""
    if not isinstance(b, Tensor):
        bd = float(b)
        pick = a.data >= bd
        return emit(Tensor(np.where(pick, a.data, bd)), (a,), lambda g: (g * pick,))
    _same(a, b, "maximum")
    pick = a.data >= b.data
    return emit(Tensor(np.where(pick, a.data, b.data)), (a, b),
                lambda g: (g * pick, g * ~pick))


def abs(a):  # noqa: A001 - mirrors numpy's name for the box-geometry namespace
    sgn = np.sign(a.data)
    return emit(Tensor(np.abs(a.data)), (a,), lambda g: (g * sgn,))


def exp(a):
    e = np.exp(a.data)
    return emit(Tensor(e), (a,), lambda g: (g * e,))


def sqrt(a):
    r = np.sqrt(a.data)
    return emit(Tensor(r), (a,), lambda g: (g * 0.5 / r,))


def power(a, p: int):
    ad = a.data
    return emit(Tensor(ad ** p), (a,), lambda g: (g * p * ad ** (p - 1),))


# ---------------------------------------------------------------------------
# reductions and movement
# ---------------------------------------------------------------------------

def sum(a):  # noqa: A001
    shape = a.shape
    return emit(Tensor(np.sum(a.data).reshape(1, 1, 1, 1)), (a,),
                lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))


def mean(a):
    return scale(sum(a), 1.0 / max(1, a.data.size))


def reshape(a, shape):
    shape = _shape4(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    return emit(Tensor(a.data.reshape(shape)), (a,), lambda g: (g.reshape(old),))


def concat_channels(parts):
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for p in parts:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: {p.shape} does not match (n,h,w)={(n, h, w)}")
    sizes = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return emit(Tensor(np.concatenate([p.data for p in parts], axis=1)), parts, rule)


def split_channels(a, sizes):
    sizes = [int(s) for s in sizes]
    if _isum(sizes) != a.shape[1] or any(s < 0 for s in sizes):
        raise ShapeError(f"split sizes {sizes} do not sum to {a.shape[1]} channels")
    bounds = np.cumsum([0] + sizes)
    outs = []
    for i in range(len(sizes)):
        lo, hi = bounds[i], bounds[i + 1]

        def rule(g, lo=lo, hi=hi):
            full_g = np.zeros(a.shape)
            full_g[:, lo:hi] = g
            return (full_g,)

        outs.append(emit(Tensor(a.data[:, lo:hi].copy()), (a,), rule))
    return outs


def _isum(xs):
    total = 0
    for x in xs:
        total += x
    return total


def take_queries(a, batch_idx, query_idx):
    """Gather columns a[b, :, q, 0] for paired indices into a (1, c, k, 1) tensor."""
    if a.shape[3] != 1:
        raise ShapeError(f"take_queries expects (n, c, q, 1), got {a.shape}")
    bi = np.asarray(batch_idx, dtype=np.intp)
    qi = np.asarray(query_idx, dtype=np.intp)
    picked = a.data[bi, :, qi, 0]  # (k, c)
    out = picked.T.reshape(1, a.shape[1], len(bi), 1)
    shape = a.shape

    def rule(g):
        full_g = np.zeros(shape)
        np.add.at(full_g, (bi, slice(None), qi, 0), g[0, :, :, 0].T)
        return (full_g,)

    return emit(Tensor(out.copy()), (a,), rule)
