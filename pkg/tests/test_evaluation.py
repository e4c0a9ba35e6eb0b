import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kpipoison.config import load_config
from kpipoison.errors import StageError
from kpipoison.evaluation import (
    UNDEFINED,
    ConfusionMatrix,
    MetricsRow,
    compute_metrics,
    metrics_csv,
    plotdata_csv,
    prepare,
    poison_split,
    run_cell,
    run_gate_replay,
    run_grid,
)
from kpipoison.gate import ConstantClassifier, GatePolicy


def test_metrics_arithmetic():
    r = compute_metrics(ConfusionMatrix(tp=99, fp=0, tn=100, fn=1))
    assert r.dr == pytest.approx(0.99) and r.fpr == 0 and r.fnr == pytest.approx(0.01)


def test_undefined_rates():
    r = compute_metrics(ConfusionMatrix(tp=0, fp=3, tn=4, fn=0))
    assert r.dr is None and r.fnr is None
    line = metrics_csv([MetricsRow(1, 1.2, ConfusionMatrix(0, 3, 4, 0), r, 0)]).splitlines()[1]
    assert line.split(",")[6] == UNDEFINED and "nan" not in line.lower()


@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 10**6))
def test_rate_identities(tp, fp, tn, pos):
    fn = pos - min(tp, pos)
    tp = min(tp, pos)
    r = compute_metrics(ConfusionMatrix(tp, fp, tn, fn))
    assert r.dr + r.fnr == pytest.approx(1.0)
    for v in (r.dr, r.fnr, r.fpr):
        assert v is None or 0 <= v <= 1


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionMatrix(-1, 0, 0, 0)


def test_from_predictions():
    cm = ConfusionMatrix.from_predictions([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (2, 1, 1, 1)
    assert cm.to_csv() == "actual,pred_benign,pred_poisoned\nbenign,1,1\npoisoned,1,2\n"


@pytest.fixture(scope="module")
def smoke():
    return load_config("smoke")


def test_run_cell_deterministic(smoke):
    a = run_cell(2, 1.5, smoke)
    b = run_cell(2, 1.5, smoke)
    assert a.row == b.row
    assert a.checkpoint_bytes == b.checkpoint_bytes
    assert a.cm.total == len(a.test_windows)


def test_run_cell_seed_override(smoke):
    a = run_cell(1, 1.5, smoke, seed=smoke.seed + 1)
    assert a.row.seed == smoke.seed + 1


def test_stage_tagged_failure(smoke):
    cfg = load_config("smoke")
    cfg.attack.n_victims_per_slice = 10  # more victims than UEs
    with pytest.raises(StageError) as ei:
        run_cell(1, 1.5, cfg)
    assert ei.value.stage == "plan" and str(ei.value).startswith("[plan]")


def test_grid_outputs(tmp_path, smoke):
    res = run_grid(smoke, tmp_path)
    assert len(res.rows) == 24 and not res.failures
    rows = list(csv.DictReader(io.StringIO((tmp_path / "metrics.csv").read_text())))
    assert len(rows) == 24
    assert list(rows[0]) == ["L", "f", "TP", "FP", "TN", "FN", "DR", "FPR", "FNR", "seed"]
    plot = (tmp_path / "plotdata.csv").read_text().splitlines()
    assert plot[0] == "L,f,metric,value" and len(plot) - 1 == 24 * 3
    for L in (1, 2, 5, 10, 15, 20):
        for f in ("1.2", "1.3", "1.4", "1.5"):
            assert (tmp_path / f"cm_L{L}_f{f}.csv").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config_hash"] == smoke.config_hash()
    assert "total_s" in json.loads((tmp_path / "timings.json").read_text())
    for r in res.rows:
        assert r.cm.total == r.cm.tp + r.cm.fp + r.cm.tn + r.cm.fn


def test_grid_deterministic(tmp_path, smoke):
    run_grid(smoke, tmp_path / "a")
    run_grid(smoke, tmp_path / "b")
    for name in ("metrics.csv", "plotdata.csv", "manifest.json", "cm_L5_f1.3.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_grid_records_partial_failures(tmp_path):
    cfg = load_config("smoke")
    cfg.grid.sequence_lengths = [1, 500]  # L=500 longer than any UE's test split
    res = run_grid(cfg, tmp_path)
    assert {r.L for r in res.rows} == {1}
    assert {f["L"] for f in res.failures} == {500}
    assert all(f["stage"] == "train" for f in res.failures)


def test_plan_independent_of_factor(smoke):
    data = prepare(smoke)
    assert data.plan.with_factor(1.2).victims == data.plan.with_factor(1.5).victims


def test_gate_replay_scores_from_start(tmp_path, smoke):
    data = prepare(smoke)
    split = poison_split(data, 1.5)
    cfg = load_config("smoke")
    cfg.gate.policy = GatePolicy.DISCARD_POISONED_AND_NOTIFY
    start = 60
    audit = tmp_path / "audit.jsonl"
    audit.write_text("")
    res = run_gate_replay(split.dataset, split.truth.labels, data.benign, ConstantClassifier(2, 1.0), cfg, start, audit)
    assert [p for p, _, _ in res.impact] == list(range(start, int(data.benign.timestamp.max()) + 1))
    assert all(n.period_start >= start for n in res.gate.notifications)
    assert len(audit.read_text().splitlines()) == len(res.gate.notifications) > 0
    assert all(o.tagged is None or o.tagged.message.period_start >= start for o in res.outputs)
