"""Parameterized building blocks: linear maps, per-frame MLP encoders, and
the two-layer LSTM used as a message generator.

Each block exposes a value-level forward on Tensors plus a node-level
forward that composes onto a caller-supplied tape; the value form is a thin
wrapper over the node form, so there is a single source of truth for the
math.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .tensor import Node, ShapeError, Tape, Tensor

GATE_ORDER = ("input", "forget", "cell", "output")


@dataclass
class LinearParams:
    """Affine map y = x . weight^T + bias, weight stored [out, in]."""

    weight: Tensor
    bias: Tensor

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class LstmLayerParams:
    """One LSTM layer; rows of the 4H axis partition into gates (i, f, g, o)."""

    w_ih: Tensor  # [4H, in]
    w_hh: Tensor  # [4H, H]
    bias: Tensor  # [4H]

    @property
    def hidden_dim(self) -> int:
        return self.w_hh.shape[1]

    @property
    def in_dim(self) -> int:
        return self.w_ih.shape[1]


@dataclass
class MessageGeneratorParams:
    """Two stacked LSTM layers; layer2's hidden size equals the feature dim
    so messages live in the same [T, D] space as the features."""

    layer1: LstmLayerParams
    layer2: LstmLayerParams


@dataclass
class EncoderParams:
    """Per-frame two-layer MLP with tanh after the first map; weights are
    shared across frames."""

    l1: LinearParams
    l2: LinearParams


# ---------------------------------------------------------------------------
# Node-level forwards. Parameters arrive as bound namespaces whose fields
# are tape leaves (see bind()).
# ---------------------------------------------------------------------------


def bind(tape: Tape, obj):
    """Recursively mirror a parameter record onto a tape as leaf nodes."""
    if isinstance(obj, Tensor):
        return tape.leaf(obj)
    fields = getattr(obj, "__dataclass_fields__", None)
    if fields is None:
        raise TypeError(f"cannot bind object of type {type(obj).__name__}")
    return SimpleNamespace(**{name: bind(tape, getattr(obj, name)) for name in fields})


def iter_params(obj, prefix: str = ""):
    """Yield (dotted-name, Tensor) pairs in dataclass field order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
        return
    fields = getattr(obj, "__dataclass_fields__", None)
    if fields is None:
        return
    for name in fields:
        child = getattr(obj, name)
        if isinstance(child, Tensor) or hasattr(child, "__dataclass_fields__"):
            yield from iter_params(child, f"{prefix}.{name}" if prefix else name)


def linear_nodes(tape: Tape, lin, x: Node) -> Node:
    return tape.add(tape.matmul(x, lin.weight, transpose_b=True), lin.bias)


def encode_nodes(tape: Tape, enc, x: Node) -> Node:
    """Rows of x are encoded independently: l2(tanh(l1(row)))."""
    return linear_nodes(tape, enc.l2, tape.tanh(linear_nodes(tape, enc.l1, x)))


def lstm_cell_nodes(tape: Tape, layer, x: Node, h: Node, c: Node):
    """One step of the forget-gate LSTM recurrence; returns (h', c')."""
    hd = layer.w_hh.value.shape[1]
    z = tape.add(
        tape.add(
            tape.matmul(x, layer.w_ih, transpose_b=True),
            tape.matmul(h, layer.w_hh, transpose_b=True),
        ),
        layer.bias,
    )
    i = tape.sigmoid(tape.slice_last(z, 0, hd))
    f = tape.sigmoid(tape.slice_last(z, hd, 2 * hd))
    g = tape.tanh(tape.slice_last(z, 2 * hd, 3 * hd))
    o = tape.sigmoid(tape.slice_last(z, 3 * hd, 4 * hd))
    c2 = tape.add(tape.mul(f, c), tape.mul(i, g))
    h2 = tape.mul(o, tape.tanh(c2))
    return h2, c2


def lstm_layer_nodes(tape: Tape, layer, steps: list) -> list:
    """Run one layer over a step list of [B, in] nodes from zero state."""
    batch = steps[0].value.shape[0]
    hd = layer.w_hh.value.shape[1]
    h = tape.leaf(np.zeros((batch, hd)))
    c = tape.leaf(np.zeros((batch, hd)))
    out = []
    for x in steps:
        h, c = lstm_cell_nodes(tape, layer, x, h, c)
        out.append(h)
    return out


def lstm2_nodes(tape: Tape, gen, steps: list) -> list:
    """Two-layer unroll; the returned step list is the message sequence."""
    return lstm_layer_nodes(tape, gen.layer2, lstm_layer_nodes(tape, gen.layer1, steps))


# ---------------------------------------------------------------------------
# Value-level forwards.
# ---------------------------------------------------------------------------


def _rows(x: Tensor) -> np.ndarray:
    arr = x.array
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def linear_forward(p: LinearParams, x: Tensor) -> Tensor:
    """x . weight^T + bias applied per row; 1-d input is treated as one row."""
    tape = Tape()
    out = linear_nodes(tape, bind(tape, p), tape.leaf(_rows(x)))
    arr = out.value
    return Tensor.wrap(arr[0].copy() if x.array.ndim == 1 else arr)


def mlp_encode_sequence(e: EncoderParams, raw: Tensor) -> Tensor:
    """Encode a [T, P] raw sequence into [T, D] features, frame by frame."""
    if raw.array.ndim != 2 or raw.shape[1] != e.l1.in_dim:
        raise ShapeError(f"encoder expects [T, {e.l1.in_dim}], got {raw.shape}")
    tape = Tape()
    out = encode_nodes(tape, bind(tape, e), tape.leaf(raw))
    return Tensor.wrap(out.value)


def lstm_cell_step(p: LstmLayerParams, x_t: Tensor, h: Tensor, c: Tensor):
    """Single cell step on Tensors; rank of the outputs follows the inputs."""
    tape = Tape()
    bound = bind(tape, p)
    hn, cn = lstm_cell_nodes(
        tape, bound, tape.leaf(_rows(x_t)), tape.leaf(_rows(h)), tape.leaf(_rows(c))
    )
    if x_t.array.ndim == 1:
        return Tensor.wrap(hn.value[0].copy()), Tensor.wrap(cn.value[0].copy())
    return Tensor.wrap(hn.value), Tensor.wrap(cn.value)


def lstm2_forward(g: MessageGeneratorParams, x: Tensor) -> Tensor:
    """Map a [T, D] feature sequence to its [T, D] message sequence."""
    if x.array.ndim != 2 or x.shape[1] != g.layer1.in_dim:
        raise ShapeError(f"message generator expects [T, {g.layer1.in_dim}], got {x.shape}")
    tape = Tape()
    bound = bind(tape, g)
    steps = [tape.leaf(x.array[t:t + 1]) for t in range(x.shape[0])]
    out = lstm2_nodes(tape, bound, steps)
    return Tensor.wrap(np.vstack([n.value for n in out]))


# ---------------------------------------------------------------------------
# Initialization.
# ---------------------------------------------------------------------------


def _check_dims(*dims):
    for d in dims:
        if int(d) < 1:
            raise ValueError(f"dimensions must be positive, got {dims}")


def _uniform_fan(rng: np.random.Generator, out_dim: int, in_dim: int) -> Tensor:
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    return Tensor.wrap(rng.uniform(-limit, limit, size=(out_dim, in_dim)))


def init_linear(rng: np.random.Generator, in_dim: int, out_dim: int) -> LinearParams:
    _check_dims(in_dim, out_dim)
    return LinearParams(weight=_uniform_fan(rng, out_dim, in_dim),
                        bias=Tensor.zeros(out_dim))


def init_lstm_layer(rng: np.random.Generator, in_dim: int, hidden_dim: int) -> LstmLayerParams:
    _check_dims(in_dim, hidden_dim)
    bias = np.zeros(4 * hidden_dim)
    bias[hidden_dim:2 * hidden_dim] = 1.0  # forget gate opens early
    return LstmLayerParams(
        w_ih=_uniform_fan(rng, 4 * hidden_dim, in_dim),
        w_hh=_uniform_fan(rng, 4 * hidden_dim, hidden_dim),
        bias=Tensor.wrap(bias),
    )


def init_message_generator(rng: np.random.Generator, feat_dim: int,
                           hidden_dim: int) -> MessageGeneratorParams:
    return MessageGeneratorParams(
        layer1=init_lstm_layer(rng, feat_dim, hidden_dim),
        layer2=init_lstm_layer(rng, hidden_dim, feat_dim),
    )


def init_encoder(rng: np.random.Generator, in_dim: int, hidden_dim: int,
                 out_dim: int) -> EncoderParams:
    return EncoderParams(
        l1=init_linear(rng, in_dim, hidden_dim),
        l2=init_linear(rng, hidden_dim, out_dim),
    )
