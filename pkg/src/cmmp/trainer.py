"""SGD-with-momentum training: step schedule, per-stage loops, and the
two-stage orchestration (independent-stream pretraining, then joint
fine-tuning under the competing objective).

All randomness is counter-seeded from (seed, stage, epoch-or-iteration), so
any iteration boundary can be resumed bit-exactly from a checkpoint without
serializing generator state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import evaluate, stack_segment_batch
from .metrics import MetricsRecord
from .model import CMMPModel, ModelDims, bind_model, forward_steps, init_model
from .objectives import adversarial_loss_nodes, cross_entropy_nodes
from .synthdata import Dataset
from .tensor import ShapeError, Tape

STAGES = ("pretrain", "finetune")
_STAGE_IDS = {"pretrain": 1, "finetune": 2}


@dataclass
class TrainConfig:
    """Desk-scale defaults; the reference protocol (batch 64, decay every
    4500, 13500 total iterations) is one config away."""

    batch_size: int = 32
    momentum: float = 0.9
    lr_pretrain: float = 1e-3
    lr_finetune: float = 1e-4
    decay_every: int = 1500
    decay_factor: float = 0.1
    pretrain_iters: int = 2000
    finetune_iters: int = 2000
    seed: int = 0
    fusion_mode: str = "cmmp"
    adversarial: bool = True
    adversarial_detach: bool = True
    eval_every: int = 500
    t_steps: int = 8
    window: int = 5
    feat_dim: int = 16
    enc_hidden: int = 32
    lstm_hidden: int = 64

    @property
    def total_iters(self) -> int:
        return self.pretrain_iters + self.finetune_iters

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_pretrain <= 0 or self.lr_finetune <= 0:
            raise ValueError("learning rates must be > 0")
        if not (0.0 < self.decay_factor < 1.0):
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.decay_every < 1 or self.eval_every < 1:
            raise ValueError("decay_every and eval_every must be >= 1")
        if self.pretrain_iters < 0 or self.finetune_iters < 0:
            raise ValueError("stage lengths must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")


def dims_for(dataset: Dataset, cfg: TrainConfig) -> ModelDims:
    spec = dataset.spec
    return ModelDims(
        a_dim=spec.a_dim,
        m_dim=cfg.window * spec.m_dim,
        classes=spec.classes,
        feat_dim=cfg.feat_dim,
        enc_hidden=cfg.enc_hidden,
        lstm_hidden=cfg.lstm_hidden,
    )


def lr_schedule(stage: str, iteration: int, cfg: TrainConfig) -> float:
    """base_lr(stage) * decay_factor ** floor(iteration / decay_every)."""
    base = cfg.lr_pretrain if stage == "pretrain" else cfg.lr_finetune
    return base * cfg.decay_factor ** (iteration // cfg.decay_every)


@dataclass
class OptimizerState:
    """One velocity buffer per parameter tensor, shapes mirrored exactly."""

    velocity: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, model: CMMPModel) -> "OptimizerState":
        return cls(velocity={name: np.zeros_like(p.array)
                             for name, p in model.named_parameters()})


def sgd_momentum_step(params: dict, grads: dict, state: OptimizerState,
                      lr: float, momentum: float):
    """v <- momentum * v - lr * g; theta <- theta + v (in place)."""
    for name, p in params.items():
        g = grads[name]
        g = g.array if hasattr(g, "array") else np.asarray(g, dtype=np.float64)
        v = state.velocity[name]
        if g.shape != p.array.shape or v.shape != p.array.shape:
            raise ShapeError(f"optimizer: {name} has param {p.array.shape}, "
                             f"grad {g.shape}, velocity {v.shape}")
        np.multiply(v, momentum, out=v)
        v -= lr * g
        p.array += v
    return params, state


def _stage_rng(seed: int, stage: str, *key):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, _STAGE_IDS[stage], *key])))


def _batch_indices(n: int, cfg: TrainConfig, stage: str, iteration: int) -> np.ndarray:
    """Epochwise seeded shuffle; the last partial batch is kept."""
    per_epoch = math.ceil(n / cfg.batch_size)
    epoch, slot = divmod(iteration, per_epoch)
    perm = _stage_rng(cfg.seed, stage, epoch, 0).permutation(n)
    return perm[slot * cfg.batch_size:(slot + 1) * cfg.batch_size]


def train_step(model: CMMPModel, dataset: Dataset, cfg: TrainConfig,
               stage: str, iteration: int, state: OptimizerState,
               trainable: list) -> dict:
    """One optimizer update; returns the training-batch loss values."""
    idx = _batch_indices(len(dataset.train), cfg, stage, iteration)
    srng = _stage_rng(cfg.seed, stage, iteration, 1)
    batch = [dataset.train[i] for i in idx]
    steps_a, steps_m, labels = stack_segment_batch(batch, cfg.t_steps, cfg.window,
                                                   "train", srng)
    mode = "none" if stage == "pretrain" else cfg.fusion_mode
    tape = Tape()
    bound = bind_model(tape, model)
    s_a, s_m, _ = forward_steps(tape, bound,
                                [tape.leaf(s) for s in steps_a],
                                [tape.leaf(s) for s in steps_m], mode)
    l_a = cross_entropy_nodes(tape, s_a, labels)
    l_m = cross_entropy_nodes(tape, s_m, labels)
    if stage == "finetune" and cfg.adversarial:
        al_a, al_m = adversarial_loss_nodes(tape, l_a, l_m, cfg.adversarial_detach)
        total = tape.add(al_a, al_m)
    else:
        al_a, al_m = l_a, l_m
        total = tape.add(l_a, l_m)
    grads = tape.backward(total)
    params = dict(model.named_parameters())
    lr = lr_schedule(stage, iteration, cfg)
    sgd_momentum_step({k: params[k] for k in trainable},
                      {k: grads[bound.by_name[k].nid] for k in trainable},
                      state, lr, cfg.momentum)
    return {"l_a": l_a.item(), "l_m": l_m.item(),
            "al_a": al_a.item(), "al_m": al_m.item(), "lr": lr}


def _eval_record(model, dataset, cfg, stage, global_iter, mode, t0) -> MetricsRecord:
    res = evaluate(model, dataset.test, cfg.t_steps, cfg.window, mode=mode)
    return MetricsRecord(
        stage=stage, iteration=global_iter,
        L_a=res.losses.l_a, L_m=res.losses.l_m,
        AL_a=res.losses.al_a, AL_m=res.losses.al_m,
        acc_spatial=res.acc_spatial, acc_temporal=res.acc_temporal,
        acc_fused=res.acc_fused,
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )


def _run_stage(model, dataset, cfg, stage, state, start_iter, stop_iter,
               global_offset, t0, on_record=None, on_step=None):
    if not dataset.train:
        raise ValueError("empty dataset")
    records = []
    params = dict(model.named_parameters())
    if stage == "pretrain":
        trainable = [k for k in params if not k.startswith(("gen_a", "gen_m"))]
    else:
        trainable = list(params)
    eval_mode = "none" if stage == "pretrain" else cfg.fusion_mode

    def emit(global_iter):
        rec = _eval_record(model, dataset, cfg, stage, global_iter, eval_mode, t0)
        records.append(rec)
        if on_record:
            on_record(rec)

    if global_offset + start_iter == 0 and stop_iter > start_iter:
        emit(0)  # start-of-training boundary
    for it in range(start_iter, stop_iter):
        info = train_step(model, dataset, cfg, stage, it, state, trainable)
        if on_step:
            on_step(stage, it, info)
        done = it + 1
        if done % cfg.eval_every == 0 and done != stop_iter:
            emit(global_offset + done)
    emit(global_offset + stop_iter)  # stage boundary
    return records


def pretrain_stage(model: CMMPModel, dataset: Dataset, cfg: TrainConfig,
                   state: OptimizerState | None = None, start_iter: int = 0,
                   stop_iter: int | None = None, global_offset: int = 0,
                   t0: float | None = None, on_record=None, on_step=None):
    """Train encoders and heads with independent per-stream cross-entropy;
    message generators are not touched."""
    cfg.validate()
    state = state or OptimizerState.zeros(model)
    stop = cfg.pretrain_iters if stop_iter is None else stop_iter
    records = _run_stage(model, dataset, cfg, "pretrain", state, start_iter, stop,
                         global_offset, time.perf_counter() if t0 is None else t0,
                         on_record, on_step)
    return model, state, records


def finetune_stage(model: CMMPModel, dataset: Dataset, cfg: TrainConfig,
                   state: OptimizerState | None = None, start_iter: int = 0,
                   stop_iter: int | None = None, global_offset: int | None = None,
                   t0: float | None = None, on_record=None, on_step=None):
    """Jointly train all parameters under the configured fusion mode,
    minimizing the competing objective when cfg.adversarial is set."""
    cfg.validate()
    model.fusion_mode = cfg.fusion_mode
    state = state or OptimizerState.zeros(model)
    stop = cfg.finetune_iters if stop_iter is None else stop_iter
    offset = cfg.pretrain_iters if global_offset is None else global_offset
    records = _run_stage(model, dataset, cfg, "finetune", state, start_iter, stop,
                         offset, time.perf_counter() if t0 is None else t0,
                         on_record, on_step)
    return model, state, records


def train(dims: ModelDims | None, dataset: Dataset, cfg: TrainConfig,
          on_record=None, on_step=None):
    """Initialize, pretrain, then fine-tune; returns (model, state, records).

    Records are emitted at iteration 0, every eval_every iterations, and at
    both stage boundaries, with a strictly increasing global iteration index.
    """
    cfg.validate()
    if not dataset.train:
        raise ValueError("empty dataset")
    dims = dims or dims_for(dataset, cfg)
    model = init_model(cfg.seed, dims, cfg.fusion_mode)
    t0 = time.perf_counter()
    records = []
    state = OptimizerState.zeros(model)
    if cfg.pretrain_iters > 0:
        _, _, recs = pretrain_stage(model, dataset, cfg, state, t0=t0,
                                    on_record=on_record, on_step=on_step)
        records.extend(recs)
    if cfg.finetune_iters > 0:
        # fresh momentum for the second stage
        state = OptimizerState.zeros(model)
        _, _, recs = finetune_stage(model, dataset, cfg, state, t0=t0,
                                    on_record=on_record, on_step=on_step)
        records.extend(recs)
    return model, state, records
