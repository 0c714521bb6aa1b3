import json

import numpy as np
import pytest

from cmmp.bench import CELL_DEFS, CELL_NAMES, format_table, matrix_to_dict, run_matrix
from cmmp.evaluation import evaluate
from cmmp.metrics import MetricsRecord, MetricsWriter, read_metrics
from cmmp.model import init_model
from cmmp.synthdata import DatasetSpec, generate
from cmmp.trainer import TrainConfig, dims_for

TINY_SPEC = DatasetSpec(shape_classes=2, motion_classes=2, train_per_class=6,
                        test_per_class=4, frames=12, a_dim=6, m_dim=4, window=2,
                        noise=0.2, motion_scale=4.0, crosstalk=0.3, seed=11)
TINY_CFG = TrainConfig(batch_size=8, pretrain_iters=10, finetune_iters=10,
                       eval_every=5, t_steps=3, window=2, feat_dim=4,
                       enc_hidden=6, lstm_hidden=4, decay_every=8, seed=11)


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate(TINY_SPEC)


def test_cell_definitions_match_required_matrix():
    assert CELL_NAMES == ("SUM", "MAX", "CMMP+noAL", "SUM+AL", "MAX+AL", "CMMP")
    mapping = {(mode, adv) for _, mode, adv in CELL_DEFS}
    assert len(mapping) == 6  # bijective name <-> (mode, flag)
    assert ("cmmp", True) in mapping and ("cmmp", False) in mapping


def test_evaluate_counts_percentages(tiny_dataset):
    model = init_model(11, dims_for(tiny_dataset, TINY_CFG))
    res = evaluate(model, tiny_dataset.test[:4], TINY_CFG.t_steps, TINY_CFG.window)
    for acc in (res.acc_spatial, res.acc_temporal, res.acc_fused):
        assert acc in {0.0, 25.0, 50.0, 75.0, 100.0}
    assert res.count == 4


def test_evaluate_is_idempotent(tiny_dataset):
    model = init_model(11, dims_for(tiny_dataset, TINY_CFG))
    r1 = evaluate(model, tiny_dataset.test, TINY_CFG.t_steps, TINY_CFG.window)
    r2 = evaluate(model, tiny_dataset.test, TINY_CFG.t_steps, TINY_CFG.window)
    assert (r1.acc_spatial, r1.acc_temporal, r1.acc_fused) == \
           (r2.acc_spatial, r2.acc_temporal, r2.acc_fused)
    assert r1.losses.l_a == r2.losses.l_a


def test_evaluate_chunking_does_not_change_results(tiny_dataset):
    model = init_model(12, dims_for(tiny_dataset, TINY_CFG))
    r1 = evaluate(model, tiny_dataset.test, TINY_CFG.t_steps, TINY_CFG.window, chunk=3)
    r2 = evaluate(model, tiny_dataset.test, TINY_CFG.t_steps, TINY_CFG.window, chunk=100)
    assert r1.acc_fused == r2.acc_fused
    assert r1.losses.l_a == pytest.approx(r2.losses.l_a, abs=1e-12)


def test_evaluate_rejects_empty_split(tiny_dataset):
    model = init_model(11, dims_for(tiny_dataset, TINY_CFG))
    with pytest.raises(ValueError, match="empty"):
        evaluate(model, [], TINY_CFG.t_steps, TINY_CFG.window)


def test_untrained_accuracy_near_chance():
    # C=12 default set: random-init fused accuracy lands in the binomial
    # band around 1/12 over 600 test samples
    ds = generate(DatasetSpec())
    cfg = TrainConfig()
    model = init_model(0, dims_for(ds, cfg))
    res = evaluate(model, ds.test, cfg.t_steps, cfg.window)
    assert 3.0 <= res.acc_fused <= 15.0


def test_run_matrix_structure(tiny_dataset):
    result = run_matrix(tiny_dataset, TINY_CFG, seeds=[11, 12])
    assert [c.name for c in result.cells] == list(CELL_NAMES)
    assert result.seeds == [11, 12]
    for cell in result.cells:
        assert set(cell.records) == {11, 12}
        assert not cell.failures
        for rec in cell.records.values():
            assert rec.stage == "finetune"
            assert rec.iteration == TINY_CFG.total_iters
    assert set(result.pretrain_records) == {11, 12}
    ranked = result.ranked()
    fused = [c.mean("acc_fused") for c in ranked]
    assert fused == sorted(fused, reverse=True)


def test_matrix_shares_pretraining_across_cells(tiny_dataset):
    # cells with the same seed but different modes must report identical
    # pretraining numbers, and the matrix must be reproducible
    r1 = run_matrix(tiny_dataset, TINY_CFG, seeds=[11])
    r2 = run_matrix(tiny_dataset, TINY_CFG, seeds=[11])
    assert r1.pretrain_records[11].acc_fused == r2.pretrain_records[11].acc_fused
    for c1, c2 in zip(r1.cells, r2.cells):
        assert c1.records[11].acc_fused == c2.records[11].acc_fused


def test_matrix_serialization_and_table(tiny_dataset):
    result = run_matrix(tiny_dataset, TINY_CFG, seeds=[11])
    blob = json.dumps(matrix_to_dict(result))
    parsed = json.loads(blob)
    assert len(parsed["cells"]) == 6
    assert set(parsed["ranking"]) == set(CELL_NAMES)
    table = format_table(result)
    assert all(name in table for name in CELL_NAMES)


def test_run_matrix_requires_seeds(tiny_dataset):
    with pytest.raises(ValueError):
        run_matrix(tiny_dataset, TINY_CFG, seeds=[])


def test_metrics_jsonl_roundtrip(tmp_path):
    path = tmp_path / "metrics.jsonl"
    writer = MetricsWriter(path)
    records = [
        MetricsRecord(stage="pretrain", iteration=0, L_a=2.5, L_m=2.4, AL_a=2.6,
                      AL_m=2.4, acc_spatial=8.0, acc_temporal=9.0, acc_fused=8.5,
                      wall_ms=1.0),
        MetricsRecord(stage="finetune", iteration=10, L_a=1.5, L_m=1.4, AL_a=1.6,
                      AL_m=1.4, acc_spatial=18.0, acc_temporal=19.0, acc_fused=28.5,
                      wall_ms=2.0),
    ]
    for r in records:
        writer.write(r)
    # every line parses independently with the exact field names
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 2
    for line in lines:
        parsed = json.loads(line)
        assert set(parsed) == {"stage", "iteration", "L_a", "L_m", "AL_a", "AL_m",
                               "acc_spatial", "acc_temporal", "acc_fused", "wall_ms"}
    assert read_metrics(path) == records
