"""Dense float64 tensors and a tape-based reverse-mode differentiation engine.

The op catalogue is deliberately small: matrix products (with optional
operand transposes), elementwise add/multiply with a row-bias broadcast,
scalar scaling, sigmoid/tanh/relu, last-axis slice and concat, axis mean,
sum-to-scalar, max-shifted log-sum-exp, and row gather. That set is enough
to express per-frame encoders, LSTM unrolls, feature fusion, and a
numerically safe cross-entropy.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "Tensor",
    "Node",
    "Tape",
    "OP_TAGS",
    "primitive_forward",
    "finite_difference_grad",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's signature."""


class NumericError(ArithmeticError):
    """A non-finite value entered or left a primitive."""


class Tensor:
    """Dense row-major float64 value; shape () is a scalar."""

    __slots__ = ("array",)

    def __init__(self, values, shape=None):
        arr = np.array(values, dtype=np.float64, order="C")
        if shape is not None:
            arr = arr.reshape(shape)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor extents must all be >= 1, got {arr.shape}")
        self.array = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt an existing float64 array without copying."""
        t = object.__new__(cls)
        t.array = arr
        return t

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls.wrap(np.zeros(shape, dtype=np.float64))

    @property
    def shape(self) -> tuple:
        return self.array.shape

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.array.reshape(-1)

    def item(self) -> float:
        if self.array.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.array.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor.wrap(self.array.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.array
    if isinstance(x, np.ndarray) and x.dtype == np.float64:
        return x
    return np.asarray(x, dtype=np.float64)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------------------
# Op catalogue: forward kernels and vector-Jacobian rules.
#
# Each vjp returns one gradient array per input. Returned arrays must be
# freshly allocated (never the incoming adjoint itself, never a view of a
# node's stored gradient) so that in-place accumulation cannot alias.
# ---------------------------------------------------------------------------


def _matmul_fwd(vals, params):
    a, b = vals
    ta, tb = params
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-d, got {a.shape} and {b.shape}")
    ae = a.T if ta else a
    be = b.T if tb else b
    if ae.shape[1] != be.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} x {b.shape} "
                         f"(transpose_a={ta}, transpose_b={tb})")
    return ae @ be


def _matmul_vjp(vals, out, g, params):
    a, b = vals
    ta, tb = params
    ae = a.T if ta else a
    be = b.T if tb else b
    da = g @ be.T
    db = ae.T @ g
    if ta:
        da = da.T
    if tb:
        db = db.T
    return da, db


def _add_fwd(vals, params):
    a, b = vals
    if a.shape == b.shape:
        return a + b
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return a + b  # row-broadcast bias
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not conform")


def _add_vjp(vals, out, g, params):
    a, b = vals
    if a.shape == b.shape:
        return g.copy(), g.copy()
    return g.copy(), g.sum(axis=0)


def _mul_fwd(vals, params):
    a, b = vals
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return a * b


def _mul_vjp(vals, out, g, params):
    a, b = vals
    return b * g, a * g


def _scale_fwd(vals, params):
    (a,) = vals
    (c,) = params
    return a * c


def _scale_vjp(vals, out, g, params):
    (c,) = params
    return (g * c,)


def _sigmoid_fwd(vals, params):
    return _stable_sigmoid(vals[0])


def _sigmoid_vjp(vals, out, g, params):
    return (out * (1.0 - out) * g,)


def _tanh_fwd(vals, params):
    return np.tanh(vals[0])


def _tanh_vjp(vals, out, g, params):
    return ((1.0 - out * out) * g,)


def _relu_fwd(vals, params):
    return np.maximum(vals[0], 0.0)


def _relu_vjp(vals, out, g, params):
    # subgradient 0 at the kink
    return ((vals[0] > 0.0) * g,)


def _slice_fwd(vals, params):
    (a,) = vals
    start, stop = params
    if a.ndim < 1:
        raise ShapeError("slice: operand must have at least one axis")
    n = a.shape[-1]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice: bounds [{start}, {stop}) invalid for last extent {n}")
    return a[..., start:stop]


def _slice_vjp(vals, out, g, params):
    (a,) = vals
    start, stop = params
    z = np.zeros_like(a)
    z[..., start:stop] = g
    return (z,)


def _concat_fwd(vals, params):
    a, b = vals
    if a.ndim != b.ndim or a.ndim < 1 or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: shapes {a.shape} and {b.shape} do not conform")
    return np.concatenate([a, b], axis=-1)


def _concat_vjp(vals, out, g, params):
    a, b = vals
    k = a.shape[-1]
    return np.array(g[..., :k]), np.array(g[..., k:])


def _mean_fwd(vals, params):
    (a,) = vals
    (axis,) = params
    if not (0 <= axis < a.ndim):
        raise ShapeError(f"mean: axis {axis} invalid for shape {a.shape}")
    return a.mean(axis=axis)


def _mean_vjp(vals, out, g, params):
    (a,) = vals
    (axis,) = params
    n = a.shape[axis]
    return (np.ones_like(a) * (np.expand_dims(g, axis) / n),)


def _sum_fwd(vals, params):
    return np.asarray(vals[0].sum())


def _sum_vjp(vals, out, g, params):
    return (np.full(vals[0].shape, float(g)),)


def _logsumexp_fwd(vals, params):
    (a,) = vals
    if a.ndim < 1:
        raise ShapeError("logsumexp: operand must have at least one axis")
    m = a.max(axis=-1, keepdims=True)
    return np.squeeze(m + np.log(np.exp(a - m).sum(axis=-1, keepdims=True)), axis=-1)


def _logsumexp_vjp(vals, out, g, params):
    (a,) = vals
    softmax = np.exp(a - np.expand_dims(out, -1))
    return (softmax * np.expand_dims(g, -1),)


def _gather_fwd(vals, params):
    (a,) = vals
    (index,) = params
    if a.ndim != 2:
        raise ShapeError(f"gather: operand must be 2-d, got {a.shape}")
    if not (0 <= index < a.shape[0]):
        raise ShapeError(f"gather: row {index} out of range for shape {a.shape}")
    return a[index:index + 1]


def _gather_vjp(vals, out, g, params):
    (a,) = vals
    (index,) = params
    z = np.zeros_like(a)
    z[index] = g[0]
    return (z,)


_OPS: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_matmul_fwd, _matmul_vjp),
    "add": (_add_fwd, _add_vjp),
    "mul": (_mul_fwd, _mul_vjp),
    "scale": (_scale_fwd, _scale_vjp),
    "sigmoid": (_sigmoid_fwd, _sigmoid_vjp),
    "tanh": (_tanh_fwd, _tanh_vjp),
    "relu": (_relu_fwd, _relu_vjp),
    "slice": (_slice_fwd, _slice_vjp),
    "concat": (_concat_fwd, _concat_vjp),
    "mean": (_mean_fwd, _mean_vjp),
    "sum": (_sum_fwd, _sum_vjp),
    "logsumexp": (_logsumexp_fwd, _logsumexp_vjp),
    "gather": (_gather_fwd, _gather_vjp),
}

OP_TAGS = tuple(_OPS)

# kwargs accepted by each op, in positional order, with defaults
_OP_PARAMS: dict[str, tuple[tuple[str, object], ...]] = {
    "matmul": (("transpose_a", False), ("transpose_b", False)),
    "scale": (("factor", None),),
    "slice": (("start", None), ("stop", None)),
    "mean": (("axis", None),),
    "gather": (("index", None),),
}


def primitive_forward(op_tag: str, inputs: Sequence, **params) -> Tensor:
    """Evaluate one catalogue op on Tensor inputs, outside any tape."""
    if op_tag not in _OPS:
        raise ValueError(f"unknown op tag {op_tag!r}")
    vals = [_as_array(x) for x in inputs]
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise NumericError(f"{op_tag}: non-finite input value")
    spec = _OP_PARAMS.get(op_tag, ())
    unknown = set(params) - {name for name, _ in spec}
    if unknown:
        raise ValueError(f"{op_tag}: unexpected parameters {sorted(unknown)}")
    ptuple = tuple(params.get(name, default) for name, default in spec)
    out = _OPS[op_tag][0](vals, ptuple)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op_tag}: non-finite output value")
    return Tensor.wrap(np.asarray(out, dtype=np.float64))


class Node:
    """One record on a tape: an op, its input nodes, and the forward value."""

    __slots__ = ("nid", "op", "inputs", "value", "params")

    def __init__(self, nid, op, inputs, value, params=()):
        self.nid = nid
        self.op = op
        self.inputs = inputs
        self.value = value
        self.params = params

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        return f"Node({self.nid}, {self.op}, shape={self.value.shape})"


class Tape:
    """Topologically ordered op records plus, after backward, a gradient map.

    A tape and its nodes form a single-owner unit: build, forward and
    backward are single-threaded. Node ids are assigned in append order, so
    every input precedes its consumers by construction.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.gradients: dict[int, Tensor] = {}

    def _record(self, op, inputs, value, params=()) -> Node:
        if not np.all(np.isfinite(value)):
            raise NumericError(f"{op}: non-finite output value")
        node = Node(len(self.nodes), op, inputs, np.asarray(value, dtype=np.float64), params)
        self.nodes.append(node)
        return node

    # -- leaves ------------------------------------------------------------

    def leaf(self, value) -> Node:
        """Record an input node. Gradients are reported for every leaf."""
        arr = _as_array(value)
        if not np.all(np.isfinite(arr)):
            raise NumericError("leaf: non-finite input value")
        node = Node(len(self.nodes), "leaf", (), arr)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        """Alias of leaf(); a detached value with no upstream graph."""
        return self.leaf(value)

    # -- catalogue ops -----------------------------------------------------

    def matmul(self, a: Node, b: Node, transpose_a=False, transpose_b=False) -> Node:
        params = (transpose_a, transpose_b)
        return self._record("matmul", (a, b), _matmul_fwd((a.value, b.value), params), params)

    def add(self, a: Node, b: Node) -> Node:
        return self._record("add", (a, b), _add_fwd((a.value, b.value), ()))

    def mul(self, a: Node, b: Node) -> Node:
        return self._record("mul", (a, b), _mul_fwd((a.value, b.value), ()))

    def scale(self, a: Node, factor: float) -> Node:
        params = (float(factor),)
        return self._record("scale", (a,), _scale_fwd((a.value,), params), params)

    def sigmoid(self, a: Node) -> Node:
        return self._record("sigmoid", (a,), _stable_sigmoid(a.value))

    def tanh(self, a: Node) -> Node:
        return self._record("tanh", (a,), np.tanh(a.value))

    def relu(self, a: Node) -> Node:
        return self._record("relu", (a,), np.maximum(a.value, 0.0))

    def slice_last(self, a: Node, start: int, stop: int) -> Node:
        params = (int(start), int(stop))
        return self._record("slice", (a,), _slice_fwd((a.value,), params), params)

    def concat_last(self, a: Node, b: Node) -> Node:
        return self._record("concat", (a, b), _concat_fwd((a.value, b.value), ()))

    def mean(self, a: Node, axis: int) -> Node:
        params = (int(axis),)
        return self._record("mean", (a,), _mean_fwd((a.value,), params), params)

    def sum(self, a: Node) -> Node:
        return self._record("sum", (a,), _sum_fwd((a.value,), ()))

    def logsumexp(self, a: Node) -> Node:
        return self._record("logsumexp", (a,), _logsumexp_fwd((a.value,), ()))

    def gather_row(self, a: Node, index: int) -> Node:
        params = (int(index),)
        return self._record("gather", (a,), _gather_fwd((a.value,), params), params)

    # -- reverse sweep -----------------------------------------------------

    def backward(self, root: Node) -> dict[int, Tensor]:
        """Accumulate d(root)/d(node) for every node at or before root.

        The root must be a scalar (shape product 1). Nodes that do not
        influence the root receive zero gradients. Results are stored in
        self.gradients keyed by node id and also returned.
        """
        if root.value.size != 1:
            raise ValueError(f"backward requires scalar root, got shape {root.value.shape}")
        grads: list = [None] * len(self.nodes)
        grads[root.nid] = np.ones_like(root.value)
        for node in reversed(self.nodes[: root.nid + 1]):
            g = grads[node.nid]
            if g is None or not node.inputs:
                continue
            vjp = _OPS[node.op][1]
            contribs = vjp(tuple(i.value for i in node.inputs), node.value, g, node.params)
            for inp, c in zip(node.inputs, contribs):
                cur = grads[inp.nid]
                if cur is None:
                    # ops on 0-d arrays yield immutable numpy scalars; store
                    # a real array so later in-place accumulation sticks
                    grads[inp.nid] = c if isinstance(c, np.ndarray) else np.asarray(c)
                else:
                    cur += c
        self.gradients = {
            node.nid: Tensor.wrap(g if g is not None else np.zeros_like(node.value))
            for node, g in zip(self.nodes, grads)
        }
        return self.gradients

    def grad(self, node: Node) -> Tensor:
        """Gradient of the last backward() root with respect to node."""
        return self.gradients[node.nid]


def finite_difference_grad(fn: Callable[[list], float], params: list, h: float = 1e-5) -> list:
    """Central-difference gradients of a scalar function of Tensor parameters.

    fn is called as fn(params) and must be deterministic; parameters are
    perturbed in place one coordinate at a time and restored afterwards.
    """
    if h <= 0:
        raise ValueError("finite differences need h > 0")
    grads = []
    for p in params:
        flat = p.array.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(fn(params))
            flat[i] = orig - h
            lo = float(fn(params))
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * h)
        grads.append(Tensor.wrap(g.reshape(p.array.shape)))
    return grads
