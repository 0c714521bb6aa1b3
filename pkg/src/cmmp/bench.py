"""The six-cell ablation matrix over fusion modes and objectives.

Within one seed, pretraining is run once and every cell fine-tunes from that
bit-identical snapshot, so cell differences are attributable to the fusion
mode and objective alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import MetricsRecord
from .model import init_model
from .trainer import OptimizerState, TrainConfig, dims_for, finetune_stage, pretrain_stage

# name -> (fusion mode, adversarial objective); the mapping is bijective
CELL_DEFS = (
    ("SUM", "sum", False),
    ("MAX", "max", False),
    ("CMMP+noAL", "cmmp", False),
    ("SUM+AL", "sum", True),
    ("MAX+AL", "max", True),
    ("CMMP", "cmmp", True),
)
CELL_NAMES = tuple(name for name, _, _ in CELL_DEFS)


@dataclass
class ExperimentCell:
    name: str
    fusion_mode: str
    adversarial: bool
    seeds: list
    records: dict = field(default_factory=dict)   # seed -> final MetricsRecord
    history: dict = field(default_factory=dict)   # seed -> [MetricsRecord]
    failures: dict = field(default_factory=dict)  # seed -> error text

    def _vals(self, attr):
        return [getattr(self.records[s], attr) for s in self.seeds if s in self.records]

    def mean(self, attr: str) -> float:
        vals = self._vals(attr)
        return float(np.mean(vals)) if vals else float("nan")

    def std(self, attr: str) -> float:
        vals = self._vals(attr)
        return float(np.std(vals)) if vals else float("nan")


@dataclass
class MatrixResult:
    cells: list
    pretrain_records: dict   # seed -> MetricsRecord at the stage boundary
    seeds: list
    wall_ms: float

    def cell(self, name: str) -> ExperimentCell:
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)

    def ranked(self) -> list:
        """Cells ordered by mean fused accuracy, best first."""
        return sorted(self.cells, key=lambda c: -c.mean("acc_fused"))


def run_matrix(dataset, base_cfg: TrainConfig, seeds, progress=None) -> MatrixResult:
    """Run all six cells for every seed; a failed cell is recorded and the
    rest continue."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    t0 = time.perf_counter()
    cells = [ExperimentCell(name=n, fusion_mode=m, adversarial=a, seeds=seeds)
             for n, m, a in CELL_DEFS]
    pretrain_records = {}
    for seed in seeds:
        cfg = replace(base_cfg, seed=seed)
        model = init_model(seed, dims_for(dataset, cfg), cfg.fusion_mode)
        state = OptimizerState.zeros(model)
        _, _, pre_recs = pretrain_stage(model, dataset, cfg, state)
        pretrain_records[seed] = pre_recs[-1]
        if progress:
            progress(f"seed {seed}: pretraining done "
                     f"(spatial {pre_recs[-1].acc_spatial:.1f}%, "
                     f"temporal {pre_recs[-1].acc_temporal:.1f}%)")
        for cell in cells:
            cell_cfg = replace(cfg, fusion_mode=cell.fusion_mode,
                               adversarial=cell.adversarial)
            snapshot = model.copy()
            try:
                _, _, recs = finetune_stage(snapshot, dataset, cell_cfg,
                                            OptimizerState.zeros(snapshot))
                cell.records[seed] = recs[-1]
                cell.history[seed] = recs
                if progress:
                    progress(f"seed {seed}: {cell.name} fused "
                             f"{recs[-1].acc_fused:.2f}%")
            except Exception as exc:  # noqa: BLE001 - cell isolation
                cell.failures[seed] = f"{type(exc).__name__}: {exc}"
                if progress:
                    progress(f"seed {seed}: {cell.name} FAILED ({exc})")
    return MatrixResult(cells=cells, pretrain_records=pretrain_records,
                        seeds=seeds, wall_ms=(time.perf_counter() - t0) * 1000.0)


def matrix_to_dict(result: MatrixResult) -> dict:
    def rec(r: MetricsRecord):
        return None if r is None else r.__dict__
    return {
        "seeds": result.seeds,
        "wall_ms": result.wall_ms,
        "pretrain": {str(s): rec(r) for s, r in result.pretrain_records.items()},
        "ranking": [c.name for c in result.ranked()],
        "cells": [
            {
                "name": c.name,
                "fusion_mode": c.fusion_mode,
                "adversarial": c.adversarial,
                "mean_acc_fused": c.mean("acc_fused"),
                "std_acc_fused": c.std("acc_fused"),
                "mean_acc_spatial": c.mean("acc_spatial"),
                "mean_acc_temporal": c.mean("acc_temporal"),
                "per_seed": {str(s): rec(c.records.get(s)) for s in c.seeds},
                "failures": c.failures,
            }
            for c in result.cells
        ],
    }


def format_table(result: MatrixResult) -> str:
    """Ranked text table of mean accuracies (a pure function of the cells)."""
    lines = [f"{'method':<12} {'spatial':>8} {'temporal':>9} {'fused':>8} {'std':>6}"]
    lines.append("-" * len(lines[0]))
    for c in result.ranked():
        lines.append(f"{c.name:<12} {c.mean('acc_spatial'):>8.2f} "
                     f"{c.mean('acc_temporal'):>9.2f} {c.mean('acc_fused'):>8.2f} "
                     f"{c.std('acc_fused'):>6.2f}")
    return "\n".join(lines)
