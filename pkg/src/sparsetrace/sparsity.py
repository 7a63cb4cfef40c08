"""Sparsity metrics and sparsifying operators.

Sparsity counts entries exactly equal to 0.0 (no epsilon). Block and total
sparsity are element-count-weighted means over layer statistics, which by
construction equal flat counting over the concatenated tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SparsityStat:
    scope: str
    element_count: int
    zero_count: int

    @property
    def sparsity(self) -> float:
        return self.zero_count / self.element_count


@dataclass(frozen=True)
class BlockSparsityStat:
    block: str
    members: tuple
    element_count: int
    zero_count: int

    @property
    def sparsity(self) -> float:
        return self.zero_count / self.element_count


def sparsity(t, scope: str = "") -> SparsityStat:
    """Zero-value ratio of a tensor (array or Tensor)."""
    a = np.asarray(getattr(t, "data", t))
    if a.size == 0:
        raise ValueError(f"cannot measure sparsity of empty tensor {scope!r}")
    return SparsityStat(scope, a.size, int(np.count_nonzero(a == 0.0)))


def block_sparsity(stats, block: str = "") -> BlockSparsityStat:
    """Element-weighted aggregate of layer stats; equals flat counting."""
    stats = list(stats)
    if not stats:
        raise ValueError(f"block {block!r} has no member statistics")
    return BlockSparsityStat(
        block,
        tuple(stats),
        sum(s.element_count for s in stats),
        sum(s.zero_count for s in stats),
    )


def total_sparsity(stats) -> float:
    """Model-level sparsity: the same aggregation over all layers."""
    return block_sparsity(stats, "total").sparsity


class ActivationAccumulator:
    """Accumulates zero/element counts of a block output across batches."""

    def __init__(self):
        self.zero_count = 0
        self.element_count = 0

    def update(self, z):
        a = np.asarray(getattr(z, "data", z))
        self.zero_count += int(np.count_nonzero(a == 0.0))
        self.element_count += a.size

    @property
    def sparsity(self) -> float:
        return self.zero_count / self.element_count


def threshold_sparsify(a, theta: float):
    """Zero every entry with |x| < theta; entries with |x| == theta survive."""
    if theta < 0:
        raise ValueError(f"threshold must be nonnegative, got {theta}")
    a = np.asarray(getattr(a, "data", a))
    return np.where(np.abs(a) < theta, 0.0, a)


def topk_sparsify(a, k: int):
    """Keep the k largest-magnitude entries, ties broken by lower flat index."""
    a = np.asarray(getattr(a, "data", a))
    if not 1 <= k <= a.size:
        raise ValueError(f"k must lie in [1, {a.size}], got {k}")
    flat = a.ravel()
    # stable sort on (-|x|, index): mergesort keeps lower indices first on ties
    order = np.argsort(-np.abs(flat), kind="stable")
    out = np.zeros_like(flat)
    keep = order[:k]
    out[keep] = flat[keep]
    return out.reshape(a.shape)


@dataclass(frozen=True)
class SparsifierSpec:
    """A sparsifying operator: magnitude threshold, top-k, or identity."""

    method: str  # "threshold" | "topk" | "identity"
    value: float = 0.0

    def __post_init__(self):
        if self.method == "threshold":
            if self.value < 0:
                raise ValueError(f"threshold must be nonnegative, got {self.value}")
        elif self.method == "topk":
            if int(self.value) < 1:
                raise ValueError(f"top-k count must be >= 1, got {self.value}")
        elif self.method != "identity":
            raise ValueError(f"unknown sparsifier method {self.method!r}")

    def apply(self, a):
        if self.method == "identity":
            return a
        if self.method == "threshold":
            return threshold_sparsify(a, self.value)
        k = min(int(self.value), np.asarray(getattr(a, "data", a)).size)
        return topk_sparsify(a, k)

    @property
    def is_identity(self) -> bool:
        return self.method == "identity" or (self.method == "threshold" and self.value == 0.0)
