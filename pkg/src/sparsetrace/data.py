"""Dataset loading: IDX files (the MNIST distribution format) and a
deterministic synthetic generator for fast experiments."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"image/label count mismatch: {len(self.images)} vs {len(self.labels)}")

    def subset(self, n: int, seed: int = 0) -> "Dataset":
        if n >= len(self.labels):
            return self
        idx = np.random.default_rng(seed).permutation(len(self.labels))[:n]
        return Dataset(self.images[idx], self.labels[idx], self.split)


def _read(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse an IDX image/label file pair; pixels are scaled by 1/255."""
    raw = _read(images_path)
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != IMAGES_MAGIC:
        raise ValueError(
            f"{images_path}: expected image magic {IMAGES_MAGIC:#010x}, got {magic:#010x}")
    n, h, w = struct.unpack_from(">III", raw, 4)
    if len(raw) < 16 + n * h * w:
        raise ValueError(f"{images_path}: truncated ({len(raw)} bytes for {n}x{h}x{w})")
    images = np.frombuffer(raw, np.uint8, n * h * w, 16).reshape(n, h, w, 1) / 255.0

    raw = _read(labels_path)
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != LABELS_MAGIC:
        raise ValueError(
            f"{labels_path}: expected label magic {LABELS_MAGIC:#010x}, got {magic:#010x}")
    (nl,) = struct.unpack_from(">I", raw, 4)
    if nl != n:
        raise ValueError(f"label count {nl} does not match image count {n}")
    if len(raw) < 8 + n:
        raise ValueError(f"{labels_path}: truncated")
    labels = np.frombuffer(raw, np.uint8, n, 8).astype(np.int64)
    return Dataset(images, labels, split)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX pair (pixels quantized back to bytes)."""
    n, h, w, c = dataset.images.shape
    if c != 1:
        raise ValueError(f"IDX export supports single-channel images, got {c} channels")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, h, w))
        f.write(np.round(dataset.images[..., 0] * 255.0).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def synth_dataset(classes: int, samples: int, image_size: int, seed: int,
                  channels: int = 1, noise: float = 0.25, jitter: int = 0,
                  split: str = "train") -> Dataset:
    """Class-conditional Gaussian blobs rendered as images.

    Each class owns a fixed set of blob centers (drawn once from the class
    seed), so the task is linearly separable at low noise; `noise` raises
    the difficulty and `jitter` adds per-sample circular shifts of up to
    that many pixels, introducing intra-class variability.
    """
    if classes < 1 or samples < 1 or image_size < 4:
        raise ValueError("classes, samples must be positive and image_size >= 4")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    templates = np.zeros((classes, image_size, image_size, channels))
    for c in range(classes):
        crng = np.random.default_rng(1_000_003 * (c + 1) + 17)
        for _ in range(3):
            cy, cx = crng.uniform(2, image_size - 2, 2)
            sig = crng.uniform(1.0, 2.5)
            ch = crng.integers(0, channels)
            templates[c, :, :, ch] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig**2))
    templates /= max(templates.max(), 1e-12)
    labels = rng.integers(0, classes, samples).astype(np.int64)
    images = templates[labels]
    if jitter:
        shifts = rng.integers(-jitter, jitter + 1, (samples, 2))
        images = np.stack([np.roll(img, tuple(s), axis=(0, 1))
                           for img, s in zip(images, shifts)])
    images = images + rng.normal(0.0, noise, images.shape)
    return Dataset(np.clip(images, 0.0, 1.0), labels, split)
