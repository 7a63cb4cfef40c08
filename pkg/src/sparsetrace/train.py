"""Mini-batch SGD with regularization, gradient hooks and sparsity logging.

Gradient hooks are applied to the raw total gradient (data + regularizer
term) before learning-rate scaling, so a threshold keeps its meaning under
a decay schedule. Per-scope gradient sparsity is measured on the post-hook
kernel gradient, i.e. exactly the tensor entering the update; a content
hash of both is logged with every snapshot.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .hooks import HookedModel, ScopeMap, compile_scope_map, hooked_gradients
from .models import ModelSpec, forward
from .sparsity import ActivationAccumulator, SparsityStat, block_sparsity, sparsity, total_sparsity
from .tensor import Tensor


class DivergenceError(RuntimeError):
    pass


@dataclass
class Regularizer:
    kind: str = "none"  # none | l1 | l2 | l1l2
    alpha: float = 0.0
    alpha2: float = 0.0  # l2 coefficient when kind == "l1l2"

    def __post_init__(self):
        if self.kind not in ("none", "l1", "l2", "l1l2"):
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if self.alpha < 0 or self.alpha2 < 0:
            raise ValueError("regularizer coefficients must be nonnegative")

    def penalty(self, weights) -> float:
        total = 0.0
        for w in weights:
            a = np.asarray(getattr(w, "data", w))
            if self.kind in ("l1", "l1l2"):
                total += self.alpha * np.abs(a).sum()
            if self.kind == "l2":
                total += 0.5 * self.alpha * (a * a).sum()
            elif self.kind == "l1l2":
                total += 0.5 * self.alpha2 * (a * a).sum()
        return total

    def gradient(self, w: np.ndarray) -> np.ndarray:
        if self.kind == "l1":
            return self.alpha * np.sign(w)
        if self.kind == "l2":
            return self.alpha * w
        if self.kind == "l1l2":
            return self.alpha * np.sign(w) + self.alpha2 * w
        return np.zeros_like(w)


def regularized_loss(data_loss: float, weights, reg: Regularizer) -> float:
    """Total objective: data loss plus the regularizer penalty over kernels."""
    return float(data_loss) + reg.penalty(weights)


@dataclass
class TrainingConfig:
    learning_rate: float = 0.05
    batch_size: int = 128
    epochs: int = 3
    regularizer: Regularizer = field(default_factory=Regularizer)
    gradient_hooks: Optional[ScopeMap] = None
    metrics_every: int = 10
    seed: int = 0
    lr_decay_every: int = 0  # epochs between x0.1 decays; 0 disables
    max_steps: int = 0  # hard iteration cap; 0 disables
    eval_every_epoch: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.metrics_every < 1:
            raise ValueError("metrics cadence must be >= 1")


@dataclass
class Snapshot:
    step: int
    epoch: int
    loss: float
    per_scope: dict  # scope -> SparsityStat of the applied kernel gradient
    per_block: dict  # block -> sparsity
    total: float
    grad_hashes: dict  # scope -> sha256 of the applied kernel gradient
    eval_accuracy: Optional[float] = None


@dataclass
class MetricsLog:
    snapshots: list = field(default_factory=list)

    def write_csv(self, path, scopes):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "epoch", "loss", "total_grad_sparsity"]
                       + [f"grad_sparsity/{s}" for s in scopes] + ["eval_accuracy"])
            for s in self.snapshots:
                w.writerow([s.step, s.epoch, repr(s.loss), repr(s.total)]
                           + [repr(s.per_scope[sc].sparsity) for sc in scopes]
                           + ["" if s.eval_accuracy is None else repr(s.eval_accuracy)])

    def late_training_total(self, fraction: float = 0.1) -> float:
        """Mean total gradient sparsity over the final `fraction` of steps."""
        if not self.snapshots:
            raise ValueError("empty metrics log")
        last_step = self.snapshots[-1].step
        cut = last_step - max(1, int(round(last_step * fraction)))
        tail = [s.total for s in self.snapshots if s.step > cut]
        return float(np.mean(tail))


def sgd_step(model: ModelSpec, grads: dict, lr: float) -> None:
    """In-place w <- w - lr * g for every trainable parameter."""
    for name, p in model.parameters().items():
        g = grads[name]
        ga = np.asarray(getattr(g, "data", g))
        if not np.all(np.isfinite(ga)):
            raise DivergenceError(f"non-finite gradient for {name!r}")
        model.set_parameter(name, p.data - lr * ga)


def _grad_hash(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


def train(model: ModelSpec, dataset, config: TrainingConfig, eval_dataset=None,
          checkpoint_path=None):
    """Train in place; returns the MetricsLog."""
    if len(dataset.labels) == 0:
        raise ValueError("training dataset is empty")
    hm = (compile_scope_map(config.gradient_hooks, model)
          if config.gradient_hooks is not None else HookedModel(model, {}, {}))
    kernel_names = {s: f"{s}/{'kernel' if model.layer(s).kind == 'conv' else 'weights'}"
                    for s in model.weight_scopes()}
    reg = config.regularizer
    rng = np.random.default_rng(config.seed)
    log = MetricsLog()
    step = 0
    n = len(dataset.labels)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        if config.lr_decay_every and epoch and epoch % config.lr_decay_every == 0:
            lr *= 0.1
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            tape = T.Tape()
            logits, _ = forward(model, dataset.images[idx], mode="train", tape=tape,
                                hooks=hm.table)
            loss_t = T.softmax_cross_entropy(logits, dataset.labels[idx], tape)
            data_loss = float(loss_t.data)
            if not np.isfinite(data_loss):
                raise DivergenceError(
                    f"loss diverged at step {step}"
                    + (f"; last checkpoint: {checkpoint_path}" if checkpoint_path else ""))
            grads = T.backward(tape, loss_t)
            for scope in model.weight_scopes():
                kname = kernel_names[scope]
                grads[kname] = Tensor(
                    grads[kname].data + reg.gradient(model.weight_tensor(scope).data))
            grads = hooked_gradients(hm, grads)
            step += 1
            if step % config.metrics_every == 0 or step == 1:
                per_scope = {}
                hashes = {}
                for scope in model.weight_scopes():
                    applied = grads[kernel_names[scope]].data
                    per_scope[scope] = sparsity(applied, scope)
                    hashes[scope] = _grad_hash(applied)
                per_block = {
                    b: block_sparsity([per_scope[s] for s in members if s in per_scope], b).sparsity
                    for b, members in model.blocks.items()}
                loss_val = regularized_loss(
                    data_loss,
                    [model.weight_tensor(s) for s in model.weight_scopes()], reg)
                log.snapshots.append(Snapshot(
                    step, epoch, loss_val, per_scope, per_block,
                    total_sparsity(per_scope.values()), hashes))
            sgd_step(model, grads, lr)
            if config.max_steps and step >= config.max_steps:
                break
        if config.max_steps and step >= config.max_steps:
            break
        if config.eval_every_epoch and eval_dataset is not None:
            acc, _ = evaluate(model, eval_dataset)
            if log.snapshots:
                log.snapshots[-1].eval_accuracy = acc
        if checkpoint_path is not None:
            from . import checkpoint as ckpt

            ckpt.save_model(checkpoint_path, model)
    return log


def evaluate(model_or_hooked, dataset, batch_size: int = 256, collect_logits=False):
    """Top-1 accuracy plus per-block activation sparsity over the full set."""
    if isinstance(model_or_hooked, HookedModel):
        model, hooks = model_or_hooked.model, model_or_hooked.table
    else:
        model, hooks = model_or_hooked, None
    acc_counts = 0
    accum = {b: ActivationAccumulator() for b in model.blocks}
    n = len(dataset.labels)
    all_logits = [] if collect_logits else None
    for start in range(0, n, batch_size):
        batch = dataset.images[start : start + batch_size]
        labels = dataset.labels[start : start + batch_size]
        logits, taps = forward(model, batch, mode="eval", hooks=hooks)
        acc_counts += int((logits.data.argmax(axis=1) == labels).sum())
        for b, z in taps.items():
            accum[b].update(z)
        if collect_logits:
            all_logits.append(logits.data)
    activation = {b: a.sparsity for b, a in accum.items()}
    accuracy = acc_counts / n
    if collect_logits:
        return accuracy, activation, np.concatenate(all_logits)
    return accuracy, activation
