"""Command-line entry point.

Subcommands: train, eval, search, sweep, report, run. Each takes
--config; --seed overrides the config seed (model init and shuffling),
--out overrides the output directory. --deterministic asserts the default
single-threaded deterministic execution (parallel sweep workers are only
enabled via SPARSETRACE_THREADS).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .config import load_config
from .search import SparsityReport


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.training.seed = args.seed * 1000 + 1
    if args.out:
        cfg.output_dir = args.out
    if args.deterministic:
        os.environ.pop("SPARSETRACE_THREADS", None)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="sparsetrace",
                                description="CNN sparsity instrumentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("train", "train a model per the config; writes checkpoint + metrics CSV"),
        ("eval", "evaluate the trained checkpoint; writes eval.json"),
        ("search", "per-layer weight-threshold grid search on the checkpoint"),
        ("sweep", "gradient-threshold training sweep (baseline + each threshold)"),
        ("report", "re-render the sparsity table CSV from the stored report"),
        ("run", "full pipeline: train, eval, then sweep/search if configured"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--deterministic", action="store_true")

    args = p.parse_args(argv)
    try:
        cfg, out = _load(args)
        if args.command == "train":
            _, log = harness.run_train(cfg, out)
            print(f"trained; final loss {log.snapshots[-1].loss:.4f}; "
                  f"outputs in {out}")
        elif args.command == "eval":
            result = harness.run_eval(cfg, out)
            print(json.dumps(result, indent=2))
        elif args.command == "search":
            tm, report = harness.run_search(cfg, out)
            print(f"joint accuracy {tm.joint_accuracy:.4f} "
                  f"(baseline {tm.baseline_accuracy:.4f}); "
                  f"total weight sparsity {report.total:.4f}")
        elif args.command == "sweep":
            results = harness.run_sweep(cfg, out)
            for theta, acc, log in results:
                print(f"threshold {theta:g}: accuracy {acc:.4f}, "
                      f"late gradient sparsity {log.late_training_total():.4f}")
        elif args.command == "report":
            report = SparsityReport.from_json(
                (out / "sparsity_report.json").read_text())
            csv_text = harness.render_tables(report)
            (out / "sparsity_table.csv").write_text(csv_text)
            print(csv_text, end="")
        elif args.command == "run":
            bundle = harness.run_experiment(cfg, out)
            print(f"report bundle written to {bundle.out_dir}")
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
