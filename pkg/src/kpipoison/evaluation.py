"""End-to-end experiments over (sequence length x amplification factor)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .detector import checkpoint
from .detector.baseline import BaselineDetector
from .detector.lstm import RecurrentClassifier
from .detector.train import TrainHistory, classify, infer, train
from .detector.windows import (
    NormalizationStats,
    WindowSet,
    chronological_split,
    fit_normalization,
    make_windows,
)
from .emulator import build_topology, run as emulate
from .errors import StageError
from .gate import Gate, QosXApp, allocation_deviation
from .injector import AttackPlan, GroundTruth, plan_for_config, poison
from .records import BENIGN, POISONED, Dataset
from .reportio import dataset_messages

log = logging.getLogger(__name__)

UNDEFINED = "NA"
"""Marker written wherever a rate has a zero denominator."""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, truth, pred) -> "ConfusionMatrix":
        y = np.asarray(truth) == POISONED
        p = np.asarray(pred) == POISONED
        return cls(
            int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & ~y)), int(np.sum(~p & y))
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_csv(self) -> str:
        """2x2 table, rows = actual, columns = predicted."""
        return (
            "actual,pred_benign,pred_poisoned\n"
            f"benign,{self.tn},{self.fp}\n"
            f"poisoned,{self.fn},{self.tp}\n"
        )


@dataclass(frozen=True)
class Rates:
    dr: Optional[float]
    fpr: Optional[float]
    fnr: Optional[float]


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def compute_metrics(cm: ConfusionMatrix) -> Rates:
    """DR, FPR, FNR with poisoned as the positive class; ``None`` when undefined."""
    return Rates(_ratio(cm.tp, cm.tp + cm.fn), _ratio(cm.fp, cm.fp + cm.tn), _ratio(cm.fn, cm.tp + cm.fn))


def fmt_rate(v: Optional[float]) -> str:
    return UNDEFINED if v is None else f"{v:.6f}"


@dataclass
class MetricsRow:
    L: int
    f: float
    cm: ConfusionMatrix
    rates: Rates
    seed: int
    model_id: str = ""

    @property
    def dr(self):
        return self.rates.dr

    @property
    def fpr(self):
        return self.rates.fpr

    @property
    def fnr(self):
        return self.rates.fnr


METRICS_COLUMNS = ("L", "f", "TP", "FP", "TN", "FN", "DR", "FPR", "FNR", "seed")


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in rows:
        w.writerow(
            [r.L, f"{r.f:g}", r.cm.tp, r.cm.fp, r.cm.tn, r.cm.fn, fmt_rate(r.dr), fmt_rate(r.fpr), fmt_rate(r.fnr), r.seed]
        )
    return buf.getvalue()


def plotdata_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L", "f", "metric", "value"])
    for r in sorted(rows, key=lambda r: (r.f, r.L)):
        for name, v in (("DR", r.dr), ("FPR", r.fpr), ("FNR", r.fnr)):
            w.writerow([r.L, f"{r.f:g}", name, fmt_rate(v)])
    return buf.getvalue()


def cm_filename(L: int, f: float) -> str:
    return f"cm_L{L}_f{f:g}.csv"


# ---------------------------------------------------------------- pipeline
def _factor_key(f: float) -> int:
    return int(round(f * 1000))


def train_rng(seed: int, L: int, f: float) -> np.random.Generator:
    return np.random.default_rng([seed, L, _factor_key(f)])


@dataclass
class ExperimentData:
    """Benign dataset and the factor-independent attack schedule."""

    config: ExperimentConfig
    benign: Dataset
    plan: AttackPlan
    train_mask: np.ndarray
    test_mask: np.ndarray


def prepare_plan(benign: Dataset, config: ExperimentConfig) -> AttackPlan:
    """Attack schedule for ``benign``; independent of the amplification factor."""
    rng = np.random.default_rng([config.seed, 0xA77AC4])
    return _stage(
        "plan",
        plan_for_config,
        benign,
        config.emulation,
        config.attack.n_victims_per_slice,
        config.attack.amplification_factor,
        config.attack.interval_spec,
        rng,
        injection_point=config.attack.injection_point,
    )


def prepare(config: ExperimentConfig) -> ExperimentData:
    benign = _stage("emulate", emulate, config.emulation)
    plan = prepare_plan(benign, config)
    train_mask, test_mask = chronological_split(benign, config.train_fraction)
    return ExperimentData(config, benign, plan, train_mask, test_mask)


@dataclass
class PoisonedSplit:
    f: float
    dataset: Dataset
    truth: GroundTruth
    train: Dataset
    train_labels: np.ndarray
    test: Dataset
    test_labels: np.ndarray
    stats: NormalizationStats


def poison_split(data: ExperimentData, f: float) -> PoisonedSplit:
    pds, gt = _stage("poison", poison, data.benign, data.plan.with_factor(f))
    tr, te = data.train_mask, data.test_mask
    train_ds, test_ds = pds.select(tr), pds.select(te)
    stats = fit_normalization(train_ds.features[gt.labels[tr] == BENIGN])
    return PoisonedSplit(f, pds, gt, train_ds, gt.labels[tr], test_ds, gt.labels[te], stats)


@dataclass
class CellResult:
    row: MetricsRow
    cm: ConfusionMatrix
    model: RecurrentClassifier
    stats: NormalizationStats
    test_windows: WindowSet
    predictions: np.ndarray
    history: TrainHistory
    checkpoint_bytes: bytes
    timings: dict = field(default_factory=dict)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


def run_cell(
    L: int,
    f: float,
    config: ExperimentConfig,
    seed: Optional[int] = None,
    data: Optional[ExperimentData] = None,
    split: Optional[PoisonedSplit] = None,
) -> CellResult:
    """Emulate, poison at ``f``, train at ``L``, evaluate on the held-out tail."""
    if seed is not None and seed != config.seed:
        config = ExperimentConfig.from_dict(config.to_dict()).apply_seed(seed)
    timings = {}
    t0 = time.perf_counter()
    data = data or prepare(config)
    split = split or poison_split(data, f)
    timings["prepare_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    wtr = _stage("windows", make_windows, split.train, split.train_labels, L)
    wte = _stage("windows", make_windows, split.test, split.test_labels, L)
    history = TrainHistory()
    model = _stage("train", train, wtr, split.stats, config.train, train_rng(config.seed, L, f), history)
    timings["train_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    pred = _stage("evaluate", lambda: classify(infer(model, wte, split.stats)))
    cm = ConfusionMatrix.from_predictions(wte.labels, pred)
    timings["evaluate_s"] = time.perf_counter() - t0
    meta = {"seed": config.seed, "L": L, "f": f, "config_hash": config.config_hash()}
    blob = checkpoint.to_bytes(model, split.stats, config.train.to_dict(), meta)
    model_id = hashlib.sha256(blob).hexdigest()[:16]
    row = MetricsRow(L, f, cm, compute_metrics(cm), config.seed, model_id)
    return CellResult(row, cm, model, split.stats, wte, pred, history, blob, timings)


def evaluate_baseline(split: PoisonedSplit, L: int, quantile: float = 0.99):
    """Mahalanobis reference detector on the same split and windows."""
    wtr = make_windows(split.train, split.train_labels, L)
    wte = make_windows(split.test, split.test_labels, L)
    det = BaselineDetector.fit(split.train, split.train_labels, wtr, quantile)
    pred = det.predict(wte)
    return det, ConfusionMatrix.from_predictions(wte.labels, pred)


@dataclass
class GridResult:
    rows: list[MetricsRow]
    failures: list[dict]
    manifest: dict
    timings: dict


def run_grid(config: ExperimentConfig, out_dir: Optional[Path] = None) -> GridResult:
    """One model per grid cell; failures are recorded and the grid continues."""
    config.validate()
    t_start = time.perf_counter()
    timings: dict = {"cells": {}}
    t0 = time.perf_counter()
    data = prepare(config)
    timings["prepare_s"] = time.perf_counter() - t0
    rows, failures = [], []
    splits: dict[float, PoisonedSplit] = {}
    cms = {}
    for f in config.grid.amplification_factors:
        f = float(f)
        for L in config.grid.sequence_lengths:
            L = int(L)
            try:
                if f not in splits:
                    splits[f] = poison_split(data, f)
                res = run_cell(L, f, config, data=data, split=splits[f])
            except StageError as e:
                log.error("cell L=%d f=%g failed: %s", L, f, e)
                failures.append({"L": L, "f": f, "stage": e.stage, "error": str(e)})
                continue
            rows.append(res.row)
            cms[(L, f)] = res.cm
            timings["cells"][f"L{L}_f{f:g}"] = res.timings
            log.info("cell L=%d f=%g DR=%s FPR=%s", L, f, fmt_rate(res.row.dr), fmt_rate(res.row.fpr))
    timings["total_s"] = time.perf_counter() - t_start
    manifest = {
        "code_version": __version__,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "seeds": {
            "base": config.seed,
            "plan": data.plan.seed,
            "cells": {f"L{r.L}_f{r.f:g}": [config.seed, r.L, _factor_key(r.f)] for r in rows},
        },
        "models": {f"L{r.L}_f{r.f:g}": r.model_id for r in rows},
        "failures": failures,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics_csv(rows))
        (out / "plotdata.csv").write_text(plotdata_csv(rows))
        for (L, f), cm in cms.items():
            (out / cm_filename(L, f)).write_text(cm.to_csv())
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return GridResult(rows, failures, manifest, timings)


# ---------------------------------------------------------------- gate replay
@dataclass
class ReplayResult:
    gate: Gate
    latency: dict
    impact: list[tuple[int, float, float]]  # period, gate off, gate on
    outputs: list


def run_gate_replay(
    poisoned: Dataset,
    labels: Optional[np.ndarray],
    benign: Optional[Dataset],
    classifier,
    config: ExperimentConfig,
    start_t: int = 0,
    audit_log: Optional[Path] = None,
) -> ReplayResult:
    """Stream the poisoned dataset through the gate and the toy xApp.

    Impact compares three xApp instances: one on the benign dataset
    (reference), one on the raw poisoned stream (gate disabled), one behind
    the gate. All three consume the whole stream so their allocations are
    warm; only periods from ``start_t`` onward are scored. Latency and
    ``outputs`` cover the scored periods.
    """
    topo = build_topology(config.emulation)
    x = config.gate.x_mbps_per_prb
    gated_xapp = QosXApp(x)
    gate = Gate(classifier, config.gate.policy, subscribers=[gated_xapp], audit_log=None)
    outputs = []
    scoring = False
    for m in dataset_messages(poisoned, topo):
        if not scoring and m.period_start >= start_t:
            gate.clear_logs(audit_log)
            scoring = True
        out = gate.process(m)
        if scoring:
            outputs.append(out)
    impact = []
    if benign is not None:
        ref, raw = QosXApp(x), QosXApp(x)
        for m in dataset_messages(benign, topo):
            ref.consume(m)
        for m in dataset_messages(poisoned, topo):
            raw.consume(m)
        off = allocation_deviation(raw, ref)
        on = allocation_deviation(gated_xapp, ref)
        impact = [(p, off[p], on.get(p, 0.0)) for p in sorted(off) if p >= start_t]
    return ReplayResult(gate, gate.latency_summary(), impact, outputs)


def latency_csv(summary: dict) -> str:
    return "p50_ms,p95_ms,max_ms,n\n" + (
        f"{summary['p50']:.6f},{summary['p95']:.6f},{summary['max']:.6f},{summary['n']}\n"
    )


def impact_csv(impact) -> str:
    lines = ["period,mean_abs_dprb_gate_off,mean_abs_dprb_gate_on"]
    lines += [f"{p},{off:.6f},{on:.6f}" for p, off, on in impact]
    return "\n".join(lines) + "\n"
