"""Dense float64 matrices with a define-by-run reverse-mode tape.

A :class:`Tape` records every primitive applied to its :class:`Var` nodes in
execution order, so a single reversed sweep in :meth:`Tape.backward` visits
each node exactly once. Tapes are cheap and meant to be rebuilt for every
training step.

Example::

    tape = Tape()
    x = tape.leaf(np.array([[1.0, 2.0]]), name="x")
    loss = sum_(mul(x, x))
    grads = tape.backward(loss)      # {"x": [[2., 4.]]}
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, NumericalError

__all__ = [
    "Tape", "Var", "as_matrix", "xavier_uniform",
    "matmul", "spmm", "add", "sub", "mul", "div", "scale", "neg", "transpose",
    "concat", "split", "take_rows", "tanh", "sigmoid", "log_sigmoid", "exp",
    "log", "sum_", "l2norm_rows", "softmax_rows",
]


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate external input as a finite 2-D float64 array."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.count_nonzero(~np.isfinite(arr)))
        raise NumericalError(f"{name}: {bad} non-finite entries")
    return arr


def xavier_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise DimensionError(f"xavier_uniform needs rows, cols >= 1, got ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


class Var:
    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(shape={self.shape}, node={self.index})"


class _Node:
    __slots__ = ("op", "parents", "backward", "leaf_name", "trainable")

    def __init__(self, op, parents, backward, leaf_name=None, trainable=False):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.leaf_name = leaf_name
        self.trainable = trainable


class Tape:
    """Ordered record of primitive operations.

    Parents always precede children because nodes are appended as the
    forward computation runs.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._values: list[np.ndarray] = []
        self._names: set[str] = set()

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None, trainable: bool = True) -> Var:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise DimensionError(f"leaf {name!r}: expected 2-D value, got shape {value.shape}")
        if trainable:
            if name is None:
                raise ValueError("trainable leaves need a name")
            if name in self._names:
                raise ValueError(f"duplicate leaf name {name!r}")
            self._names.add(name)
        return self._push(_Node("leaf", (), None, name, trainable), value)

    def constant(self, value) -> Var:
        return self.leaf(value, trainable=False)

    def _push(self, node: _Node, value: np.ndarray) -> Var:
        self.nodes.append(node)
        self._values.append(value)
        return Var(value, self, len(self.nodes) - 1)

    def record(self, op: str, value: np.ndarray, parents: Sequence[Var],
               backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Var:
        for p in parents:
            if p.tape is not self:
                raise ValueError(f"{op}: operand belongs to another tape")
        return self._push(_Node(op, tuple(p.index for p in parents), backward), value)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradient of a scalar ``loss`` for every trainable leaf.

        Leaves the loss does not depend on receive zero gradients.
        """
        if loss.tape is not self:
            raise ValueError("loss belongs to another tape")
        if loss.value.shape != (1, 1):
            raise DimensionError(f"backward needs a scalar (1, 1) loss, got {loss.value.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.index] = np.ones((1, 1))
        for idx in range(loss.index, -1, -1):
            node = self.nodes[idx]
            g = grads[idx]
            if g is None or node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                if grads[parent] is None:
                    grads[parent] = pg
                else:
                    grads[parent] = grads[parent] + pg
        out = {}
        for idx, node in enumerate(self.nodes):
            if node.trainable:
                g = grads[idx]
                out[node.leaf_name] = np.zeros_like(self._values[idx]) if g is None else g
        return out


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise ValueError("at least one operand must be a Var")


def _lift(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        return x
    return tape.constant(np.asarray(x, dtype=np.float64).reshape(np.shape(x) or (1, 1)))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


# -- primitives -------------------------------------------------------------

def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    av, bv = a.value, b.value
    return tape.record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm(matrix: sp.spmatrix, x: Var) -> Var:
    """Constant sparse (or dense) matrix times ``x``."""
    if matrix.shape[1] != x.shape[0]:
        raise DimensionError(f"spmm: shapes {matrix.shape} and {x.shape} do not conform")
    mt = matrix.T
    out = np.asarray(matrix @ x.value)
    return x.tape.record("spmm", out, (x,), lambda g: (np.asarray(mt @ g),))


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("add", a.value, b.value)
    sa, sb = a.shape, b.shape
    return tape.record("add", a.value + b.value, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("sub", a.value, b.value)
    sa, sb = a.shape, b.shape
    return tape.record("sub", a.value - b.value, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("mul", a.value, b.value)
    av, bv = a.value, b.value
    return tape.record("mul", av * bv, (a, b),
                       lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("div", a.value, b.value)
    av, bv = a.value, b.value
    out = av / bv
    return tape.record("div", out, (a, b),
                       lambda g: (_unbroadcast(g / bv, av.shape),
                                  _unbroadcast(-g * out / bv, bv.shape)))


def scale(a: Var, c: float) -> Var:
    return a.tape.record("scale", a.value * c, (a,), lambda g: (g * c,))


def neg(a: Var) -> Var:
    return scale(a, -1.0)


def transpose(a: Var) -> Var:
    return a.tape.record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def concat(parts: Sequence[Var], axis: int = 1) -> Var:
    tape = _tape_of(*parts)
    parts = [_lift(p, tape) for p in parts]
    other = 1 - axis
    if len({p.shape[other] for p in parts}) != 1:
        raise DimensionError(f"concat: mismatched shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        if axis == 1:
            return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))]
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return tape.record("concat", np.concatenate([p.value for p in parts], axis=axis), parts, backward)


def _slice(a: Var, start: int, stop: int, axis: int) -> Var:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        if axis == 1:
            full[:, start:stop] = g
        else:
            full[start:stop] = g
        return (full,)

    value = a.value[:, start:stop] if axis == 1 else a.value[start:stop]
    return a.tape.record("split", value.copy(), (a,), backward)


def split(a: Var, sizes: Sequence[int], axis: int = 1) -> list[Var]:
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split: sizes {list(sizes)} do not cover axis of length {a.shape[axis]}")
    bounds = np.cumsum([0] + list(sizes))
    return [_slice(a, int(bounds[i]), int(bounds[i + 1]), axis) for i in range(len(sizes))]


def take_rows(a: Var, index) -> Var:
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return a.tape.record("take_rows", a.value[index], (a,), backward)


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return a.tape.record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Var) -> Var:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return a.tape.record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: Var) -> Var:
    """log(sigmoid(a)) without overflow for large |a|."""
    x = a.value
    out = -np.logaddexp(0.0, -x)
    sig_neg = 0.5 * (1.0 - np.tanh(0.5 * x))
    return a.tape.record("log_sigmoid", out, (a,), lambda g: (g * sig_neg,))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape.record("exp", out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    x = a.value
    return a.tape.record("log", np.log(x), (a,), lambda g: (g / x,))


def sum_(a: Var, axis: int | None = None) -> Var:
    shape = a.shape
    if axis is None:
        out = np.array([[a.value.sum()]])
    else:
        out = a.value.sum(axis=axis, keepdims=True)
    return a.tape.record("sum", out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def l2norm_rows(a: Var) -> Var:
    """Row norms as an (n, 1) column; zero rows report norm 1 so that
    dividing by the result leaves them at zero."""
    x = a.value
    raw = np.sqrt((x * x).sum(axis=1, keepdims=True))
    zero = raw == 0.0
    out = np.where(zero, 1.0, raw)
    safe = np.where(zero, 1.0, raw)
    return a.tape.record("l2norm_rows", out, (a,),
                         lambda g: (np.where(zero, 0.0, g / safe) * x,))


def softmax_rows(a: Var) -> Var:
    x = a.value
    e = np.exp(x - x.max(axis=1, keepdims=True))
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return a.tape.record("softmax_rows", out, (a,), backward)
