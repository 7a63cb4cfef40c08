"""Experiment configuration: a YAML file mapping onto dataclasses.

ScopeMap entries appear as (pattern, location, method, value) quadruples.
Parsing and serialization round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .hooks import ScopeMap
from .search import SearchConfig, default_grid
from .train import Regularizer, TrainingConfig


@dataclass
class ModelConfig:
    name: str = "lenet"
    input_shape: list = field(default_factory=lambda: [28, 28, 1])
    classes: int = 10


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | idx
    # idx
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    # synthetic
    classes: int = 10
    train_samples: int = 4096
    test_samples: int = 1024
    image_size: int = 28
    channels: int = 1
    noise: float = 0.25
    jitter: int = 0
    seed: int = 100
    # optional caps applied after loading (0 = use everything)
    limit_train: int = 0
    limit_test: int = 0


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    hooks: list = field(default_factory=list)  # quadruples, applied during training
    search: Optional[SearchConfig] = None
    sweep: list = field(default_factory=list)  # gradient thresholds; [] disables
    output_dir: str = "runs/exp"
    seed: int = 0

    def __post_init__(self):
        if any(t < 0 for t in self.sweep):
            raise ValueError("sweep thresholds must be nonnegative")

    def scope_map(self) -> Optional[ScopeMap]:
        return ScopeMap.from_config(self.hooks) if self.hooks else None


def _reg_to_dict(r: Regularizer):
    return {"kind": r.kind, "alpha": r.alpha, "alpha2": r.alpha2}


def to_dict(cfg: ExperimentConfig) -> dict:
    d = {
        "model": {"name": cfg.model.name, "input_shape": list(cfg.model.input_shape),
                  "classes": cfg.model.classes},
        "dataset": dict(cfg.dataset.__dict__),
        "training": {
            "learning_rate": cfg.training.learning_rate,
            "batch_size": cfg.training.batch_size,
            "epochs": cfg.training.epochs,
            "regularizer": _reg_to_dict(cfg.training.regularizer),
            "metrics_every": cfg.training.metrics_every,
            "seed": cfg.training.seed,
            "lr_decay_every": cfg.training.lr_decay_every,
            "max_steps": cfg.training.max_steps,
            "eval_every_epoch": cfg.training.eval_every_epoch,
        },
        "hooks": [list(h) for h in cfg.hooks],
        "sweep": list(cfg.sweep),
        "output_dir": cfg.output_dir,
        "seed": cfg.seed,
    }
    if cfg.search is not None:
        d["search"] = {"grid": list(cfg.search.grid), "tolerance": cfg.search.tolerance,
                       "probe_subset": cfg.search.probe_subset,
                       "visit_order": list(cfg.search.visit_order)}
    return d


def from_dict(d: dict) -> ExperimentConfig:
    tr = dict(d.get("training", {}))
    reg = tr.pop("regularizer", None)
    training = TrainingConfig(
        **tr, regularizer=Regularizer(**reg) if reg else Regularizer())
    search = None
    if "search" in d:
        s = dict(d["search"])
        grid = s.pop("grid", None)
        if isinstance(grid, dict):
            grid = default_grid(grid.get("lo", 1e-6), grid.get("hi", 1.0),
                                grid.get("points", 25))
        search = SearchConfig(grid=grid or default_grid(), **s)
    return ExperimentConfig(
        model=ModelConfig(**d.get("model", {})),
        dataset=DatasetConfig(**d.get("dataset", {})),
        training=training,
        hooks=[list(h) for h in d.get("hooks", [])],
        search=search,
        sweep=list(d.get("sweep", [])),
        output_dir=d.get("output_dir", "runs/exp"),
        seed=d.get("seed", 0),
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        d = yaml.safe_load(f)
    referenced = [d.get("dataset", {}).get(k) for k in
                  ("train_images", "train_labels", "test_images", "test_labels")]
    for p in referenced:
        if p and not Path(p).exists():
            raise FileNotFoundError(f"dataset file referenced by config does not exist: {p}")
    return from_dict(d)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(to_dict(cfg), f, sort_keys=False)
