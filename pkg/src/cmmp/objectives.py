"""Cross-entropy and the competing (adversarial) objectives.

The adversarial objective for each stream is its own cross-entropy plus a
hinge on how much it trails the other stream: AL = L + max(L - L_opp, 0).
By default the opponent's loss enters as a detached constant so the hinge
pressures only the losing stream; set detach=False to let gradients flow
into the opponent as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Node, Tape, Tensor


@dataclass
class LossBundle:
    """Per-evaluation scalar losses for both streams."""

    l_a: float
    l_m: float
    al_a: float
    al_m: float

    @classmethod
    def from_cross_entropies(cls, l_a: float, l_m: float) -> "LossBundle":
        al_a, al_m = adversarial_losses(l_a, l_m)
        return cls(l_a=l_a, l_m=l_m, al_a=al_a, al_m=al_m)


def _check_labels(labels: np.ndarray, classes: int):
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes}): "
                         f"got values in [{labels.min()}, {labels.max()}]")


def cross_entropy_nodes(tape: Tape, logits: Node, labels) -> Node:
    """Mean cross-entropy of a [B, C] logits node against integer labels.

    Evaluated as logSumExp(s) - s_y with a max shift; no raw exponentials.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    batch, classes = logits.value.shape
    if labels.shape != (batch,):
        raise ValueError(f"expected {batch} labels, got shape {labels.shape}")
    _check_labels(labels, classes)
    onehot = np.zeros((batch, classes))
    onehot[np.arange(batch), labels] = 1.0
    lse = tape.logsumexp(logits)
    picked = tape.scale(tape.mean(tape.mul(logits, tape.constant(onehot)), axis=1), classes)
    per_sample = tape.add(lse, tape.scale(picked, -1.0))
    return tape.scale(tape.sum(per_sample), 1.0 / batch)


def cross_entropy(logits: Tensor, labels) -> float:
    """Value form: logits [C] with an int label, or [B, C] with B labels
    (mean over the batch)."""
    arr = logits.array if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    tape = Tape()
    return cross_entropy_nodes(tape, tape.leaf(arr), labels).item()


def cross_entropy_values(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropies of a [B, C] logit array (no tape)."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels, logits.shape[1])
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    return lse - logits[np.arange(len(labels)), labels]


def hinge(x: float) -> float:
    """max(x, 0); the derivative convention at the kink is 0."""
    return max(float(x), 0.0)


def adversarial_losses(l_a: float, l_m: float):
    """Value form of the competing objectives for a pair of stream losses."""
    return l_a + hinge(l_a - l_m), l_m + hinge(l_m - l_a)


def adversarial_loss_nodes(tape: Tape, l_a: Node, l_m: Node, detach: bool = True):
    """Competing objectives over scalar loss nodes; returns (AL_a, AL_m).

    With detach=True the opponent's loss is re-entered as a constant leaf,
    so each hinge only backpropagates into its own stream.
    """
    opp_for_a = tape.constant(l_m.value) if detach else l_m
    opp_for_m = tape.constant(l_a.value) if detach else l_a
    al_a = tape.add(l_a, tape.relu(tape.add(l_a, tape.scale(opp_for_a, -1.0))))
    al_m = tape.add(l_m, tape.relu(tape.add(l_m, tape.scale(opp_for_m, -1.0))))
    return al_a, al_m
