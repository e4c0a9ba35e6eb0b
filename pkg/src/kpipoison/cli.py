"""Command-line entry points: emulate, poison, train, evaluate, sweep, gate-replay, serve."""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .config import ExperimentConfig, load_config
from .errors import KpiError, StageError

log = logging.getLogger("kpipoison")


def _common(fn):
    fn = click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), default=Path("."), show_default=True, help="Output directory.")(fn)
    fn = click.option("--config", "config_path", default=None, help="Config file (YAML/JSON) or preset name: ci, paper, smoke.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the config seed.")(fn)
    return fn


def _staged(stage):
    """Turn library errors into a stage-tagged diagnostic and exit code 1."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError as e:
                click.echo(f"error: {e}", err=True)
                sys.exit(1)
            except (KpiError, OSError) as e:
                click.echo(f"error: [{stage}] {type(e).__name__}: {e}", err=True)
                sys.exit(1)

        return wrapper

    return deco


def _cfg(config_path, seed) -> ExperimentConfig:
    return load_config(config_path, seed)


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise click.UsageError(f"{what} not found: {path}")
    return Path(path)


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for debug).")
def main(verbose):
    """Open RAN KPI-poisoning testbed."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.command()
@_common
@_staged("emulate")
def emulate(seed, config_path, out):
    """Generate a benign KPI dataset."""
    from .emulator import run
    from .reportio import write_dataset

    cfg = _cfg(config_path, seed)
    out.mkdir(parents=True, exist_ok=True)
    ds = run(cfg.emulation)
    write_dataset(out / "dataset.csv", ds)
    click.echo(f"wrote {len(ds)} records to {out / 'dataset.csv'}")


@main.command()
@_common
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path), required=True, help="Benign dataset CSV.")
@click.option("--factor", type=float, default=None, help="Amplification factor (overrides config).")
@_staged("poison")
def poison(seed, config_path, out, dataset_path, factor):
    """Inject amplified-MVN poisoning; writes poisoned.csv (with labels) and plan.json."""
    from .evaluation import prepare_plan
    from .injector import poison as do_poison
    from .reportio import read_dataset, write_dataset

    cfg = _cfg(config_path, seed)
    ds, _ = read_dataset(_require(dataset_path, "dataset"))
    f = cfg.attack.amplification_factor if factor is None else factor
    plan = prepare_plan(ds, cfg).with_factor(f)
    pds, gt = do_poison(ds, plan)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "poisoned.csv", pds, gt.labels)
    (out / "plan.json").write_text(plan.to_json())
    click.echo(f"poisoned {gt.n_poisoned} of {len(ds)} records (f={f:g}); wrote {out / 'poisoned.csv'}")


def _labelled(path: Path):
    from .reportio import read_dataset

    ds, labels = read_dataset(_require(path, "dataset"))
    if labels is None:
        raise KpiError(f"{path} has no Label column; run `poison` first")
    return ds, labels


@main.command("train")
@_common
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path), required=True, help="Labelled (poisoned) dataset CSV.")
@click.option("--seq-len", "seq_len", type=int, required=True, help="Window length L.")
@_staged("train")
def train_cmd(seed, config_path, out, dataset_path, seq_len):
    """Train the recurrent detector on the chronological training split."""
    from .detector import checkpoint
    from .detector.train import TrainHistory, train
    from .detector.windows import chronological_split, fit_normalization, make_windows
    from .evaluation import train_rng

    cfg = _cfg(config_path, seed)
    ds, labels = _labelled(dataset_path)
    tr, _ = chronological_split(ds, cfg.train_fraction)
    train_ds, train_labels = ds.select(tr), labels[tr]
    stats = fit_normalization(train_ds.features[train_labels == 0])
    windows = make_windows(train_ds, train_labels, seq_len)
    hist = TrainHistory()
    # the factor is unknown from the file alone; key the generator on L only
    model = train(windows, stats, cfg.train, train_rng(cfg.seed, seq_len, 0.0), hist)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out / "model.ckpt", model, stats, cfg.train.to_dict(), {"seed": cfg.seed, "L": seq_len})
    (out / "history.json").write_text(json.dumps({"epoch_loss": hist.epoch_loss, "epoch_accuracy": hist.epoch_accuracy}, indent=2) + "\n")
    click.echo(f"trained L={seq_len} on {len(windows)} windows; wrote {out / 'model.ckpt'}")


@main.command()
@_common
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path), required=True, help="Labelled (poisoned) dataset CSV.")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True, help="Model checkpoint.")
@click.option("--seq-len", "seq_len", type=int, default=None, help="Expected window length; must match the checkpoint.")
@_staged("evaluate")
def evaluate(seed, config_path, out, dataset_path, model_path, seq_len):
    """Score a checkpoint on the held-out split; writes metrics.csv and the confusion matrix."""
    from .detector import checkpoint
    from .detector.train import classify, infer
    from .detector.windows import chronological_split, make_windows
    from .evaluation import ConfusionMatrix, MetricsRow, cm_filename, compute_metrics, metrics_csv

    cfg = _cfg(config_path, seed)
    ckpt = checkpoint.load(_require(model_path, "model"), expect_seq_len=seq_len)
    L = ckpt.seq_len
    ds, labels = _labelled(dataset_path)
    _, te = chronological_split(ds, cfg.train_fraction)
    windows = make_windows(ds.select(te), labels[te], L)
    pred = classify(infer(ckpt.model, windows, ckpt.stats))
    cm = ConfusionMatrix.from_predictions(windows.labels, pred)
    f = float(ckpt.meta.get("f", cfg.attack.amplification_factor))
    row = MetricsRow(L, f, cm, compute_metrics(cm), cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv([row]))
    (out / cm_filename(L, f)).write_text(cm.to_csv())
    click.echo(metrics_csv([row]), nl=False)


@main.command()
@_common
@_staged("sweep")
def sweep(seed, config_path, out):
    """Run every (L, f) grid cell end to end."""
    from .evaluation import metrics_csv, run_grid

    cfg = _cfg(config_path, seed)
    res = run_grid(cfg, out)
    click.echo(metrics_csv(res.rows), nl=False)
    if res.failures:
        for fail in res.failures:
            click.echo(f"error: cell L={fail['L']} f={fail['f']:g}: {fail['error']}", err=True)
        sys.exit(1)


@main.command("gate-replay")
@_common
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path), required=True, help="Poisoned dataset CSV to stream.")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True, help="Model checkpoint.")
@click.option("--benign", "benign_path", type=click.Path(path_type=Path), default=None, help="No-attack dataset for the impact comparison.")
@click.option("--policy", type=click.Choice(["TAG_AND_FORWARD", "DISCARD_POISONED_AND_NOTIFY"]), default=None, help="Gate policy (default from config).")
@click.option("--from-t", "from_t", type=int, default=None, help="First timestamp to replay (default: start of the held-out split).")
@click.option("--url", default=None, help="Stream to a running gate service instead of an in-process gate.")
@_staged("gate-replay")
def gate_replay(seed, config_path, out, dataset_path, model_path, benign_path, policy, from_t, url):
    """Replay a dataset through the detection gate; writes latency.csv, impact.csv, notifications.jsonl."""
    from .detector import checkpoint
    from .evaluation import impact_csv, latency_csv, run_gate_replay
    from .gate import ModelClassifier
    from .reportio import read_dataset

    cfg = _cfg(config_path, seed)
    if policy:
        cfg.gate.policy = policy
    ds, labels = read_dataset(_require(dataset_path, "dataset"))
    benign = read_dataset(_require(benign_path, "benign dataset"))[0] if benign_path else None
    if from_t is None:
        from_t = int(np.floor(cfg.train_fraction * (int(ds.timestamp.max()) + 1))) if len(ds) else 0
    out.mkdir(parents=True, exist_ok=True)
    if url:
        from .service.client import replay_remote

        summary = replay_remote(url, ds.select(ds.timestamp >= from_t), cfg)
        (out / "latency.csv").write_text(latency_csv(summary["latency"]))
        with (out / "notifications.jsonl").open("w") as fh:
            for n in summary["notifications"]:
                fh.write(json.dumps(n, separators=(",", ":")) + "\n")
        click.echo(latency_csv(summary["latency"]), nl=False)
        return
    ckpt = checkpoint.load(_require(model_path, "model"))
    audit = out / "notifications.jsonl"
    audit.write_text("")
    res = run_gate_replay(ds, labels, benign, ModelClassifier(ckpt.model, ckpt.stats), cfg, from_t, audit)
    (out / "latency.csv").write_text(latency_csv(res.latency))
    if res.impact:
        (out / "impact.csv").write_text(impact_csv(res.impact))
        off = np.mean([r[1] for r in res.impact])
        on = np.mean([r[2] for r in res.impact])
        click.echo(f"mean |dPRB| gate off={off:.4f} gate on={on:.4f}")
    click.echo(latency_csv(res.latency), nl=False)


@main.command()
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True, help="Model checkpoint.")
@click.option("--config", "config_path", default=None, help="Config file or preset name.")
@click.option("--seed", type=int, default=None)
@click.option("--policy", type=click.Choice(["TAG_AND_FORWARD", "DISCARD_POISONED_AND_NOTIFY"]), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True, type=int)
@click.option("--audit-log", type=click.Path(path_type=Path), default=None, help="Append SMO notifications here.")
@_staged("serve")
def serve(model_path, config_path, seed, policy, host, port, audit_log):
    """Run the gate as an HTTP service."""
    import uvicorn

    from .service.app import create_app

    cfg = _cfg(config_path, seed)
    app = create_app(_require(model_path, "model"), policy or cfg.gate.policy, cfg.gate.x_mbps_per_prb, audit_log)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
