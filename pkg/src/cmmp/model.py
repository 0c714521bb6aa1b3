"""The full two-stream network: per-modality encoders, cross-modal message
generators, feature fusion, per-stream heads, and fused prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Optional

import numpy as np

from .layers import (
    EncoderParams,
    LinearParams,
    MessageGeneratorParams,
    bind,
    encode_nodes,
    init_encoder,
    init_linear,
    init_message_generator,
    iter_params,
    linear_forward,
    linear_nodes,
    lstm2_forward,
    lstm2_nodes,
)
from .tensor import Node, ShapeError, Tape, Tensor

FUSION_MODES = ("cmmp", "sum", "max", "none")


class ModeError(ValueError):
    """An operation was called under an incompatible fusion mode."""


@dataclass
class ModelDims:
    """Static sizes of the network; a_dim/m_dim are per-step input widths
    (the motion width already includes the stacked window)."""

    a_dim: int
    m_dim: int
    classes: int
    feat_dim: int = 16
    enc_hidden: int = 32
    lstm_hidden: int = 64


@dataclass
class CMMPModel:
    """All learnable parameters of the two-stream network plus fusion
    settings. Parameters are mutated only between optimizer steps."""

    dims: ModelDims
    enc_a: EncoderParams
    enc_m: EncoderParams
    gen_a: MessageGeneratorParams
    gen_m: MessageGeneratorParams
    head_a: LinearParams
    head_m: LinearParams
    fusion_mode: str = "cmmp"
    score_weights: tuple = (0.5, 0.5)

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ModeError(f"unknown fusion mode {self.fusion_mode!r}")
        w_a, w_m = self.score_weights
        if w_a < 0 or w_m < 0 or abs(w_a + w_m - 1.0) > 1e-12:
            raise ValueError(f"score weights must be non-negative and sum to 1, "
                             f"got {self.score_weights}")

    def named_parameters(self):
        """(name, Tensor) pairs in a fixed traversal order."""
        out = []
        for attr in ("enc_a", "enc_m", "gen_a", "gen_m", "head_a", "head_m"):
            out.extend(iter_params(getattr(self, attr), attr))
        return out

    def copy(self) -> "CMMPModel":
        clone = init_model(0, self.dims, self.fusion_mode, self.score_weights)
        for (_, src), (_, dst) in zip(self.named_parameters(), clone.named_parameters()):
            dst.array[...] = src.array
        return clone


def init_model(seed: int, dims: ModelDims, fusion_mode: str = "cmmp",
               score_weights: tuple = (0.5, 0.5)) -> CMMPModel:
    """Deterministically initialize every parameter record from one seed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    return CMMPModel(
        dims=dims,
        enc_a=init_encoder(rng, dims.a_dim, dims.enc_hidden, dims.feat_dim),
        enc_m=init_encoder(rng, dims.m_dim, dims.enc_hidden, dims.feat_dim),
        gen_a=init_message_generator(rng, dims.feat_dim, dims.lstm_hidden),
        gen_m=init_message_generator(rng, dims.feat_dim, dims.lstm_hidden),
        head_a=init_linear(rng, dims.feat_dim, dims.classes),
        head_m=init_linear(rng, dims.feat_dim, dims.classes),
        fusion_mode=fusion_mode,
        score_weights=tuple(score_weights),
    )


@dataclass
class StreamOutputs:
    """Per-sample forward results; message fields are None unless the model
    runs in cmmp mode."""

    x_a: Tensor
    x_m: Tensor
    m_a: Optional[Tensor]
    m_m: Optional[Tensor]
    x_a_f: Tensor
    x_m_f: Tensor
    s_a: Tensor
    s_m: Tensor
    fused_probs: Tensor


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def bind_model(tape: Tape, model: CMMPModel) -> SimpleNamespace:
    """Mirror every parameter onto the tape; .by_name maps dotted names to
    leaf nodes in named_parameters() order."""
    bound = SimpleNamespace(
        enc_a=bind(tape, model.enc_a),
        enc_m=bind(tape, model.enc_m),
        gen_a=bind(tape, model.gen_a),
        gen_m=bind(tape, model.gen_m),
        head_a=bind(tape, model.head_a),
        head_m=bind(tape, model.head_m),
    )
    by_name = {}
    for attr in ("enc_a", "enc_m", "gen_a", "gen_m", "head_a", "head_m"):
        for name, node in _iter_bound(getattr(bound, attr), attr):
            by_name[name] = node
    bound.by_name = by_name
    return bound


def _iter_bound(obj, prefix):
    if isinstance(obj, Node):
        yield prefix, obj
        return
    for name, child in vars(obj).items():
        yield from _iter_bound(child, f"{prefix}.{name}")


# ---------------------------------------------------------------------------
# Fusion and scoring.
# ---------------------------------------------------------------------------


def fuse_nodes(tape: Tape, x: Node, m: Node, mode: str) -> Node:
    if mode == "cmmp":
        return tape.scale(tape.add(x, m), 0.5)
    if mode == "sum":
        return tape.add(x, m)
    if mode == "max":
        # max(x, m) = x + relu(m - x); ties keep x (relu subgradient 0 at 0)
        return tape.add(x, tape.relu(tape.add(m, tape.scale(x, -1.0))))
    if mode == "none":
        return x
    raise ModeError(f"unknown fusion mode {mode!r}")


def fuse_features(x: Tensor, m: Tensor, mode: str) -> Tensor:
    """Merge same-shape feature blocks: average, sum, elementwise max, or
    pass-through."""
    if x.shape != m.shape:
        raise ShapeError(f"fuse: shapes {x.shape} and {m.shape} differ")
    tape = Tape()
    return Tensor.wrap(fuse_nodes(tape, tape.leaf(x), tape.leaf(m), mode).value)


def generate_messages(model: CMMPModel, x_a: Tensor, x_m: Tensor):
    """Run both message generators; valid only in cmmp mode."""
    if model.fusion_mode != "cmmp":
        raise ModeError(f"messages are only generated in cmmp mode, "
                        f"model is in {model.fusion_mode!r}")
    return lstm2_forward(model.gen_a, x_a), lstm2_forward(model.gen_m, x_m)


def stream_scores(head: LinearParams, x_f: Tensor) -> Tensor:
    """Temporal mean over rows, then the linear head: [T, D] -> [C]."""
    if x_f.array.ndim != 2 or x_f.shape[1] != head.in_dim:
        raise ShapeError(f"head expects [T, {head.in_dim}], got {x_f.shape}")
    pooled = Tensor.wrap(x_f.array.mean(axis=0))
    return linear_forward(head, pooled)


# ---------------------------------------------------------------------------
# Whole-network forward.
# ---------------------------------------------------------------------------


def _mean_steps(tape: Tape, steps: list) -> Node:
    acc = steps[0]
    for s in steps[1:]:
        acc = tape.add(acc, s)
    return tape.scale(acc, 1.0 / len(steps))


def forward_steps(tape: Tape, bound, steps_a: list, steps_m: list, mode: str):
    """Core pipeline over per-step [B, .] input nodes.

    Returns (s_a, s_m, aux) where the logits are [B, C] nodes and aux holds
    the encoded features, fused features, and (in cmmp mode) the messages
    as step lists.
    """
    xs_a = [encode_nodes(tape, bound.enc_a, s) for s in steps_a]
    xs_m = [encode_nodes(tape, bound.enc_m, s) for s in steps_m]
    msgs_a = msgs_m = None
    if mode == "cmmp":
        msgs_a = lstm2_nodes(tape, bound.gen_a, xs_a)
        msgs_m = lstm2_nodes(tape, bound.gen_m, xs_m)
        fused_a = [fuse_nodes(tape, x, m, "cmmp") for x, m in zip(xs_a, msgs_m)]
        fused_m = [fuse_nodes(tape, x, m, "cmmp") for x, m in zip(xs_m, msgs_a)]
    else:
        fused_a = [fuse_nodes(tape, x, o, mode) for x, o in zip(xs_a, xs_m)]
        fused_m = [fuse_nodes(tape, x, o, mode) for x, o in zip(xs_m, xs_a)]
    s_a = linear_nodes(tape, bound.head_a, _mean_steps(tape, fused_a))
    s_m = linear_nodes(tape, bound.head_m, _mean_steps(tape, fused_m))
    aux = SimpleNamespace(xs_a=xs_a, xs_m=xs_m, msgs_a=msgs_a, msgs_m=msgs_m,
                          fused_a=fused_a, fused_m=fused_m)
    return s_a, s_m, aux


def fused_probabilities(s_a: np.ndarray, s_m: np.ndarray, score_weights) -> np.ndarray:
    w_a, w_m = score_weights
    return w_a * softmax(s_a) + w_m * softmax(s_m)


def forward_full(model: CMMPModel, raw_a: Tensor, raw_m: Tensor) -> StreamOutputs:
    """Evaluate one sample: raw_a is [T, P_a], raw_m is [T, L*P_m]."""
    raw_a = raw_a if isinstance(raw_a, Tensor) else Tensor(raw_a)
    raw_m = raw_m if isinstance(raw_m, Tensor) else Tensor(raw_m)
    if raw_a.array.ndim != 2 or raw_m.array.ndim != 2:
        raise ShapeError(f"raw inputs must be 2-d, got {raw_a.shape} and {raw_m.shape}")
    if raw_a.shape[0] != raw_m.shape[0]:
        raise ShapeError(f"step counts differ: {raw_a.shape} vs {raw_m.shape}")
    t_steps = raw_a.shape[0]
    tape = Tape()
    bound = bind_model(tape, model)
    steps_a = [tape.gather_row(tape.leaf(raw_a), t) for t in range(t_steps)]
    steps_m = [tape.gather_row(tape.leaf(raw_m), t) for t in range(t_steps)]
    s_a, s_m, aux = forward_steps(tape, bound, steps_a, steps_m, model.fusion_mode)

    stack = lambda steps: Tensor.wrap(np.vstack([n.value for n in steps]))
    probs = fused_probabilities(s_a.value[0], s_m.value[0], model.score_weights)
    return StreamOutputs(
        x_a=stack(aux.xs_a),
        x_m=stack(aux.xs_m),
        m_a=stack(aux.msgs_a) if aux.msgs_a is not None else None,
        m_m=stack(aux.msgs_m) if aux.msgs_m is not None else None,
        x_a_f=stack(aux.fused_a),
        x_m_f=stack(aux.fused_m),
        s_a=Tensor.wrap(s_a.value[0].copy()),
        s_m=Tensor.wrap(s_m.value[0].copy()),
        fused_probs=Tensor.wrap(probs),
    )


def predict(outputs: StreamOutputs) -> int:
    """Class of the fused probability vector; ties go to the lowest index."""
    return int(np.argmax(outputs.fused_probs.array))
