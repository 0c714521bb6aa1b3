"""Finite-difference verification of the whole-network gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelDims, bind_model, forward_steps, init_model
from .objectives import adversarial_loss_nodes, cross_entropy_nodes
from .tensor import Tape, finite_difference_grad


@dataclass
class GradCheckResult:
    max_error: float        # max |backward - central difference| / (1 + |cd|)
    worst_param: str
    loss_gap: float         # |L_a - L_m| at the check point
    param_count: int

    def passed(self, tol: float) -> bool:
        return self.max_error <= tol


def full_model_gradcheck(seed: int = 4, t_steps: int = 3, feat_dim: int = 4,
                         lstm_hidden: int = 4, classes: int = 3, batch: int = 2,
                         a_dim: int = 5, m_dim: int = 6, enc_hidden: int = 4,
                         h: float = 1e-5, detach: bool = True) -> GradCheckResult:
    """Check d(AL_a + AL_m)/d(theta) through the full cmmp graph.

    The competing objective has a hinge at L_a == L_m; the reported loss_gap
    should comfortably exceed h or the central differences straddle the kink.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 99])))
    dims = ModelDims(a_dim=a_dim, m_dim=m_dim, classes=classes, feat_dim=feat_dim,
                     enc_hidden=enc_hidden, lstm_hidden=lstm_hidden)
    model = init_model(seed, dims, "cmmp")
    steps_a = [rng.standard_normal((batch, a_dim)) for _ in range(t_steps)]
    steps_m = [rng.standard_normal((batch, m_dim)) for _ in range(t_steps)]
    labels = rng.integers(0, classes, size=batch)

    def stream_losses(tape: Tape):
        bound = bind_model(tape, model)
        s_a, s_m, _ = forward_steps(tape, bound,
                                    [tape.leaf(s) for s in steps_a],
                                    [tape.leaf(s) for s in steps_m], "cmmp")
        l_a = cross_entropy_nodes(tape, s_a, labels)
        l_m = cross_entropy_nodes(tape, s_m, labels)
        return l_a, l_m, bound

    tape = Tape()
    l_a, l_m, bound = stream_losses(tape)
    al_a, al_m = adversarial_loss_nodes(tape, l_a, l_m, detach)
    grads = tape.backward(tape.add(al_a, al_m))
    names = [name for name, _ in model.named_parameters()]
    analytic = {name: grads[bound.by_name[name].nid].array.copy() for name in names}

    params = [p for _, p in model.named_parameters()]
    # Under the detach contract each hinge threshold is a constant, so the
    # differenced function must hold the opponent losses at their base-point
    # values; otherwise the oracle measures the non-detached objective.
    frozen_a, frozen_m = l_a.item(), l_m.item()

    def loss_of(_params):
        t = Tape()
        la, lm, _ = stream_losses(t)
        if detach:
            return (la.item() + max(la.item() - frozen_m, 0.0)
                    + lm.item() + max(lm.item() - frozen_a, 0.0))
        return (la.item() + max(la.item() - lm.item(), 0.0)
                + lm.item() + max(lm.item() - la.item(), 0.0))

    numeric = finite_difference_grad(loss_of, params, h=h)
    max_err, worst = 0.0, names[0]
    count = 0
    for name, num in zip(names, numeric):
        count += num.size
        err = float(np.max(np.abs(analytic[name] - num.array) / (1.0 + np.abs(num.array))))
        if err > max_err:
            max_err, worst = err, name
    return GradCheckResult(max_error=max_err, worst_param=worst,
                           loss_gap=abs(l_a.item() - l_m.item()),
                           param_count=count)
