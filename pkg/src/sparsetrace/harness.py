"""Experiment orchestration: datasets in, ReportBundle out.

Every output file is reproducible byte-for-byte under a fixed seed: float
values are written with repr() and no timestamps are embedded.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import checkpoint
from .config import ExperimentConfig
from .data import Dataset, load_idx, synth_dataset
from .hooks import ScopeMap
from .models import build_model
from .search import SparsityReport, apply_thresholds, search
from .train import MetricsLog, TrainingConfig, evaluate, train


@dataclass
class ReportBundle:
    out_dir: Path
    metrics_csv: Path
    sparsity_report_json: Path | None
    sweep_summary_csv: Path | None
    grad_timeseries_csv: Path | None
    manifest_json: Path


def build_datasets(cfg: ExperimentConfig):
    d = cfg.dataset
    if d.kind == "idx":
        tr = load_idx(d.train_images, d.train_labels, "train")
        te = load_idx(d.test_images, d.test_labels, "test")
    elif d.kind == "synthetic":
        tr = synth_dataset(d.classes, d.train_samples, d.image_size, d.seed,
                           d.channels, d.noise, d.jitter, "train")
        te = synth_dataset(d.classes, d.test_samples, d.image_size, d.seed + 1,
                           d.channels, d.noise, d.jitter, "test")
    else:
        raise ValueError(f"unknown dataset kind {d.kind!r}")
    if d.limit_train:
        tr = tr.subset(d.limit_train, seed=d.seed)
    if d.limit_test:
        te = te.subset(d.limit_test, seed=d.seed)
    return tr, te


def fresh_model(cfg: ExperimentConfig):
    return build_model(cfg.model.name, cfg.model.input_shape, cfg.model.classes, cfg.seed)


def _train_once(cfg: ExperimentConfig, train_set, gradient_threshold=None,
                checkpoint_path=None):
    """One full training run; returns (model, MetricsLog)."""
    model = fresh_model(cfg)
    tc = cfg.training
    hooks = cfg.scope_map()
    if gradient_threshold is not None and gradient_threshold > 0:
        hooks = ScopeMap((hooks.rules if hooks else []).copy())
        hooks.add("*", "gradient", "threshold", gradient_threshold)
    run_cfg = TrainingConfig(
        learning_rate=tc.learning_rate, batch_size=tc.batch_size, epochs=tc.epochs,
        regularizer=tc.regularizer, gradient_hooks=hooks,
        metrics_every=tc.metrics_every, seed=tc.seed, lr_decay_every=tc.lr_decay_every,
        max_steps=tc.max_steps, eval_every_epoch=tc.eval_every_epoch)
    log = train(model, train_set, run_cfg, checkpoint_path=checkpoint_path)
    return model, log


def run_train(cfg: ExperimentConfig, out: Path):
    train_set, _ = build_datasets(cfg)
    ckpt = out / "checkpoint.bin"
    model, log = _train_once(cfg, train_set, checkpoint_path=ckpt)
    checkpoint.save_model(ckpt, model)
    log.write_csv(out / "metrics.csv", model.weight_scopes())
    return model, log


def run_eval(cfg: ExperimentConfig, out: Path):
    _, test_set = build_datasets(cfg)
    model = fresh_model(cfg)
    checkpoint.load_model(out / "checkpoint.bin", model)
    accuracy, activation = evaluate(model, test_set)
    result = {"accuracy": accuracy, "activation_sparsity": activation}
    (out / "eval.json").write_text(json.dumps(result, indent=2))
    return result


def run_search(cfg: ExperimentConfig, out: Path):
    if cfg.search is None:
        raise ValueError("config has no search section")
    _, test_set = build_datasets(cfg)
    model = fresh_model(cfg)
    checkpoint.load_model(out / "checkpoint.bin", model)
    tm = search(model, test_set, cfg.search)
    pruned, report = apply_thresholds(model, tm, cfg.training.regularizer.kind, test_set)
    checkpoint.save_model(out / "checkpoint_pruned.bin", pruned)
    (out / "threshold_map.json").write_text(tm.to_json())
    (out / "sparsity_report.json").write_text(report.to_json())
    (out / "sparsity_table.csv").write_text(render_tables(report))
    return tm, report


def run_sweep(cfg: ExperimentConfig, out: Path):
    """Baseline plus one run per sweep threshold, identical iteration counts."""
    train_set, test_set = build_datasets(cfg)
    thresholds = list(cfg.sweep)
    if 0 not in thresholds and 0.0 not in thresholds:
        thresholds = [0.0] + thresholds

    def one(theta):
        model, log = _train_once(cfg, train_set, gradient_threshold=theta)
        accuracy, _ = evaluate(model, test_set)
        return theta, accuracy, log

    workers = int(os.environ.get("SPARSETRACE_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, thresholds))
    else:
        results = [one(t) for t in thresholds]
    results.sort(key=lambda r: r[0])
    baseline_acc = next(acc for t, acc, _ in results if t == 0)
    steps = [log.snapshots[-1].step for _, _, log in results]
    if len(set(steps)) != 1:
        raise RuntimeError(f"sweep runs had unequal iteration counts: {steps}")
    with open(out / "sweep_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["gradient_threshold", "final_accuracy", "relative_accuracy",
                    "late_grad_sparsity", "steps"])
        for theta, acc, log in results:
            w.writerow([repr(float(theta)), repr(acc),
                        repr(acc / baseline_acc if baseline_acc else 0.0),
                        repr(log.late_training_total()), log.snapshots[-1].step])
    scopes = fresh_model(cfg).weight_scopes()
    with open(out / "grad_sparsity_timeseries.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["gradient_threshold", "step", "epoch", "scope", "grad_sparsity"])
        for theta, _, log in results:
            for snap in log.snapshots:
                for scope in scopes:
                    w.writerow([repr(float(theta)), snap.step, snap.epoch, scope,
                                repr(snap.per_scope[scope].sparsity)])
    return results


def render_tables(report: SparsityReport) -> str:
    """Per-block CSV with the weight/activation sparsity table layout."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["layer", "regularizer", "weight_sparsity", "activation_sparsity"])
    for block, ws in report.per_block.items():
        act = report.activation.get(block, "")
        w.writerow([block, report.regularizer, repr(ws),
                    repr(act) if act != "" else ""])
    return buf.getvalue()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(config: ExperimentConfig, out_dir=None) -> ReportBundle:
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages: dict[str, str] = {}
    try:
        run_train(config, out)
        stages["train"] = "ok"
        run_eval(config, out)
        stages["eval"] = "ok"
        if config.sweep:
            run_sweep(config, out)
            stages["sweep"] = "ok"
        if config.search is not None:
            run_search(config, out)
            stages["search"] = "ok"
    except Exception as e:  # noqa: BLE001 - manifest must record the failure
        stages["error"] = f"{type(e).__name__}: {e}"
        _write_manifest(out, stages)
        raise
    _write_manifest(out, stages)
    return ReportBundle(
        out, out / "metrics.csv",
        out / "sparsity_report.json" if config.search else None,
        out / "sweep_summary.csv" if config.sweep else None,
        out / "grad_sparsity_timeseries.csv" if config.sweep else None,
        out / "manifest.json")


def _write_manifest(out: Path, stages: dict) -> None:
    files = {p.name: _sha256(p) for p in sorted(out.iterdir())
             if p.is_file() and p.name != "manifest.json"}
    (out / "manifest.json").write_text(
        json.dumps({"stages": stages, "files": files}, indent=2))
