"""Flat binary checkpoint archive.

Layout (all little-endian):
  16-byte magic "SPTRACE-CKPT" padded with NULs, 1 version byte,
  uint32 record count, then per record:
  uint16 name length, utf-8 name, uint8 rank, uint32 per dimension,
  float64 values in row-major order.

Batchnorm running statistics are stored alongside trainable parameters
under "<scope>/running_mean" / "<scope>/running_var".
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPTRACE-CKPT\x00\x00\x00\x00"
VERSION = 1


def save_arrays(path, arrays: dict) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<I", len(arrays)))
        for name, a in arrays.items():
            a = np.asarray(a, dtype=np.float64)
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", a.ndim))
            for d in a.shape:
                f.write(struct.pack("<I", d))
            f.write(a.astype("<f8").tobytes(order="C"))


def load_arrays(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:16] != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:16]!r}")
    version = raw[16]
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", raw, 17)
    off = 21
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        ndim = raw[off]
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        if off + 8 * size > len(raw):
            raise ValueError(f"{path}: truncated checkpoint at record {name!r}")
        out[name] = np.frombuffer(raw, "<f8", size, off).reshape(shape).copy()
        off += 8 * size
    return out


def model_arrays(model) -> dict:
    arrays = {name: p.data for name, p in model.parameters().items()}
    for node in model.layers:
        for bname, buf in node.buffers.items():
            arrays[f"{node.scope}/{bname}"] = buf
    return arrays


def save_model(path, model) -> None:
    save_arrays(path, model_arrays(model))


def load_model(path, model) -> None:
    """Load a checkpoint into an already-built model, in place."""
    arrays = load_arrays(path)
    expected = set(model_arrays(model))
    if set(arrays) != expected:
        missing = expected - set(arrays)
        extra = set(arrays) - expected
        raise ValueError(
            f"{path}: checkpoint does not match model (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})")
    for name, p in model.parameters().items():
        model.set_parameter(name, arrays[name])
    for node in model.layers:
        for bname in node.buffers:
            node.buffers[bname][...] = arrays[f"{node.scope}/{bname}"]
