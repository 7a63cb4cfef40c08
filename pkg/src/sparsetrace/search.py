"""Per-layer weight-threshold grid search.

For each kernel-bearing layer in turn, the largest grid threshold is found
whose accuracy (with every other layer left dense) stays within the
configured tolerance of the baseline. All chosen thresholds are then
applied at once for the joint accuracy. Probing uses non-destructive
weight hooks; the trained checkpoint is never modified.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .hooks import HookedModel, ScopeMap, compile_scope_map
from .models import ModelSpec
from .sparsity import block_sparsity, sparsity, threshold_sparsify, total_sparsity
from .train import evaluate


def default_grid(lo: float = 1e-6, hi: float = 1.0, points: int = 25):
    return [float(t) for t in np.logspace(np.log10(lo), np.log10(hi), points)]


@dataclass
class SearchConfig:
    grid: list = field(default_factory=default_grid)
    tolerance: float = 0.0  # max relative accuracy drop; 0 means "unchanged"
    probe_subset: int = 0  # samples used for solo probes; 0 = full set
    visit_order: list = field(default_factory=list)  # empty = topology order

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("threshold grid must be strictly increasing")
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")


@dataclass
class ThresholdMap:
    thresholds: dict  # scope -> chosen theta
    baseline_accuracy: float
    solo_accuracies: dict  # scope -> {theta: accuracy}
    joint_accuracy: float

    def to_json(self):
        return json.dumps({
            "thresholds": self.thresholds,
            "baseline_accuracy": self.baseline_accuracy,
            "solo_accuracies": {s: {repr(t): a for t, a in accs.items()}
                                for s, accs in self.solo_accuracies.items()},
            "joint_accuracy": self.joint_accuracy,
        }, indent=2)


@dataclass
class SparsityReport:
    model_name: str
    regularizer: str
    per_layer: dict  # scope -> weight sparsity
    per_block: dict  # block -> weight sparsity
    total: float
    activation: dict  # block -> activation sparsity
    joint_accuracy: float
    baseline_accuracy: float

    def to_json(self):
        return json.dumps(self.__dict__, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _subset(dataset, size: int, seed: int = 0):
    if size <= 0 or size >= len(dataset.labels):
        return dataset
    idx = np.random.default_rng(seed).permutation(len(dataset.labels))[:size]
    return type(dataset)(dataset.images[idx], dataset.labels[idx], dataset.split)


def _hooked(model: ModelSpec, thresholds: dict) -> HookedModel:
    m = ScopeMap()
    for scope, theta in thresholds.items():
        if theta > 0:
            m.add(scope, "weight", "threshold", theta)
    return compile_scope_map(m, model) if m.rules else HookedModel(model, {}, {})


def search(model: ModelSpec, eval_dataset, cfg: SearchConfig) -> ThresholdMap:
    probe_set = _subset(eval_dataset, cfg.probe_subset)
    baseline, _ = evaluate(model, probe_set)
    if baseline == 0:
        raise ValueError("baseline accuracy is zero; refusing to search an untrained model")
    floor = (1.0 - cfg.tolerance) * baseline
    order = cfg.visit_order or model.weight_scopes()
    chosen: dict[str, float] = {}
    solo: dict[str, dict] = {}
    for scope in order:
        probed: dict[float, float] = {}
        pick = 0.0
        for theta in reversed(cfg.grid):
            acc, _ = evaluate(_hooked(model, {scope: theta}), probe_set)
            probed[theta] = acc
            if acc >= floor:
                pick = theta
                break
        chosen[scope] = pick
        solo[scope] = probed
    joint, _ = evaluate(_hooked(model, chosen), eval_dataset)
    return ThresholdMap(chosen, baseline, solo, joint)


def apply_thresholds(model: ModelSpec, tm: ThresholdMap, regularizer: str = "",
                     eval_dataset=None) -> tuple:
    """Materialize chosen thresholds into a new model; report the sparsities."""
    unknown = set(tm.thresholds) - set(model.weight_scopes())
    if unknown:
        raise ValueError(f"threshold map scopes not in model: {sorted(unknown)}")
    pruned = model.copy()
    per_layer_stats = []
    for scope in pruned.weight_scopes():
        w = pruned.weight_tensor(scope)
        theta = tm.thresholds.get(scope, 0.0)
        data = threshold_sparsify(w.data, theta) if theta > 0 else w.data
        pruned.set_parameter(w.name, data)
        per_layer_stats.append(sparsity(data, scope))
    stats = {s.scope: s for s in per_layer_stats}
    per_block = {
        b: block_sparsity([stats[s] for s in members if s in stats], b).sparsity
        for b, members in pruned.blocks.items()}
    activation = {}
    if eval_dataset is not None:
        _, activation = evaluate(pruned, eval_dataset)
    report = SparsityReport(
        model_name=pruned.name,
        regularizer=regularizer,
        per_layer={s.scope: s.sparsity for s in per_layer_stats},
        per_block=per_block,
        total=total_sparsity(per_layer_stats),
        activation=activation,
        joint_accuracy=tm.joint_accuracy,
        baseline_accuracy=tm.baseline_accuracy,
    )
    return pruned, report
