"""Batched evaluation of a model over a dataset split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CMMPModel, bind_model, forward_steps, fused_probabilities
from .objectives import LossBundle, cross_entropy_values
from .synthdata import sample_segments
from .tensor import Tape


@dataclass
class EvalResult:
    """Accuracies are percentages with integer-count numerators."""

    acc_spatial: float
    acc_temporal: float
    acc_fused: float
    losses: LossBundle
    count: int


def stack_segment_batch(samples, t_steps: int, window: int, mode: str, rng=None):
    """Segment-sample each item and stack per-step arrays.

    Returns (steps_a, steps_m, labels) where steps_a[t] is [B, a_dim] and
    steps_m[t] is [B, window*m_dim].
    """
    rows_a, rows_m, labels = [], [], []
    for sample in samples:
        a, m = sample_segments(sample, t_steps, window, mode, rng)
        rows_a.append(a)
        rows_m.append(m)
        labels.append(sample.label)
    block_a = np.stack(rows_a)  # [B, T, a_dim]
    block_m = np.stack(rows_m)
    steps_a = [np.ascontiguousarray(block_a[:, t]) for t in range(t_steps)]
    steps_m = [np.ascontiguousarray(block_m[:, t]) for t in range(t_steps)]
    return steps_a, steps_m, np.asarray(labels, dtype=np.int64)


def batch_logits(model: CMMPModel, steps_a, steps_m, mode: str):
    """Value-level logits for a stacked batch; no gradients retained."""
    tape = Tape()
    bound = bind_model(tape, model)
    s_a, s_m, _ = forward_steps(tape, bound,
                                [tape.leaf(s) for s in steps_a],
                                [tape.leaf(s) for s in steps_m], mode)
    return s_a.value, s_m.value


def evaluate(model: CMMPModel, split, t_steps: int, window: int,
             mode: str | None = None, chunk: int = 128) -> EvalResult:
    """Deterministic (center-anchor) evaluation of one split."""
    if not split:
        raise ValueError("cannot evaluate an empty split")
    mode = model.fusion_mode if mode is None else mode
    correct_a = correct_m = correct_fused = 0
    ce_a_sum = ce_m_sum = 0.0
    for lo in range(0, len(split), chunk):
        part = split[lo:lo + chunk]
        steps_a, steps_m, labels = stack_segment_batch(part, t_steps, window, "eval")
        s_a, s_m = batch_logits(model, steps_a, steps_m, mode)
        fused = fused_probabilities(s_a, s_m, model.score_weights)
        correct_a += int((s_a.argmax(axis=1) == labels).sum())
        correct_m += int((s_m.argmax(axis=1) == labels).sum())
        correct_fused += int((fused.argmax(axis=1) == labels).sum())
        ce_a_sum += float(cross_entropy_values(s_a, labels).sum())
        ce_m_sum += float(cross_entropy_values(s_m, labels).sum())
    n = len(split)
    losses = LossBundle.from_cross_entropies(ce_a_sum / n, ce_m_sum / n)
    return EvalResult(
        acc_spatial=100.0 * correct_a / n,
        acc_temporal=100.0 * correct_m / n,
        acc_fused=100.0 * correct_fused / n,
        losses=losses,
        count=n,
    )
