"""Dense tensors with tape-based reverse-mode differentiation.

Just enough machinery to train small convolutional classifiers: conv2d,
dense, relu, maxpool2d, batchnorm, reshape/add/scale and a softmax
cross-entropy loss. Operations are pure; recording on a Tape is opt-in
(pass tape=None for inference).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class Tensor:
    """Immutable dense float64 array with an optional parameter name."""

    __slots__ = ("data", "name")

    def __init__(self, data, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.data.shape)}{tag})"


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    # maps the output gradient to one gradient array (or None) per input
    backward_fn: Callable
    # recomputes the output from the recorded input data, for replay checks
    forward_fn: Callable


@dataclass
class Tape:
    """Topologically ordered record of primitive operations."""

    entries: list = field(default_factory=list)
    watched: list = field(default_factory=list)

    def record(self, op, inputs, output, backward_fn, forward_fn):
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward_fn, forward_fn))

    def watch(self, param: Tensor):
        if param.name is None:
            raise ValueError("watched parameters must be named")
        self.watched.append(param)

    def replay(self):
        """Re-run every recorded op; True iff all outputs reproduce exactly."""
        for e in self.entries:
            if not np.array_equal(e.forward_fn(), e.output.data):
                return False
        return True


GradientMap = dict  # scope-qualified parameter name -> Tensor


def backward(tape: Tape, loss: Tensor) -> GradientMap:
    """Reverse-accumulate d(loss)/d(param) for every watched parameter."""
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {list(loss.data.shape)}")
    grads: dict[int, np.ndarray] = {id(loss): np.array(1.0)}
    for e in reversed(tape.entries):
        g_out = grads.get(id(e.output))
        if g_out is None:
            continue
        for t, g in zip(e.inputs, e.backward_fn(g_out)):
            if g is None:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = g if acc is None else acc + g
    out: GradientMap = {}
    for p in tape.watched:
        g = grads.get(id(p))
        out[p.name] = Tensor(np.zeros_like(p.data) if g is None else g)
    return out


def _pad_amounts(h, w, kh, kw, stride, padding):
    if padding == "valid":
        return (0, 0), (0, 0)
    if padding != "same":
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    ho = -(-h // stride)
    wo = -(-w // stride)
    ph = max((ho - 1) * stride + kh - h, 0)
    pw = max((wo - 1) * stride + kw - w, 0)
    return (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "valid",
           tape: Optional[Tape] = None) -> Tensor:
    """2-D cross-correlation; x is NHWC, w is (Kh, Kw, Ci, Co)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and kernel, got {list(x.shape)} and {list(w.shape)}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(
            f"conv2d channel mismatch: input {list(x.shape)} vs kernel {list(w.shape)}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, h, wd, _ = x.shape
    kh, kw = w.shape[0], w.shape[1]
    (pt, pb), (pl, pr) = _pad_amounts(h, wd, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError(
            f"conv2d kernel {list(w.shape)} larger than padded input {list(xp.shape)}")
    out = Tensor(kernels.conv2d_forward(xp, w.data, stride))
    if tape is not None:
        hp, wp = xp.shape[1], xp.shape[2]

        def backward_fn(g):
            g = np.ascontiguousarray(g)
            dxp = kernels.conv2d_backward_input(g, w.data, stride, hp, wp)
            dx = dxp[:, pt : hp - pb, pl : wp - pr, :]
            dw = kernels.conv2d_backward_kernel(xp, g, kh, kw, stride)
            return dx, dw

        tape.record("conv2d", (x, w), out, backward_fn,
                    lambda: kernels.conv2d_forward(xp, w.data, stride))
    return out


def conv2d_intrinsic(x: Tensor, w: Tensor, hook, stride: int = 1,
                     padding: str = "valid") -> Tensor:
    """Convolution with `hook` applied to the running partial sums after each
    multiply-accumulate step (per kernel tap). Inference only; not recordable."""
    n, h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    (pt, pb), (pl, pr) = _pad_amounts(h, wd, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((n, ho, wo, co))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :]
            for c in range(ci):
                out = hook(out + patch[:, :, :, c, None] * w.data[i, j, c, :])
    return Tensor(out)


def dense(x: Tensor, w: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(
            f"dense expects 2-d input and weights, got {list(x.shape)} and {list(w.shape)}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(
            f"dense dimension mismatch: input {list(x.shape)}, weights {list(w.shape)}, "
            f"bias {list(b.shape)}")
    out = Tensor(kernels.dense_forward(x.data, w.data) + b.data)
    if tape is not None:
        def backward_fn(g):
            g = np.ascontiguousarray(g)
            dx, dw = kernels.dense_backward(x.data, w.data, g)
            return dx, dw, g.sum(axis=0)

        tape.record("dense", (x, w, b), out, backward_fn,
                    lambda: kernels.dense_forward(x.data, w.data) + b.data)
    return out


def dense_intrinsic(x: Tensor, w: Tensor, b: Tensor, hook) -> Tensor:
    """Dense layer with `hook` applied after each accumulation step. Inference only."""
    out = np.zeros((x.shape[0], w.shape[1]))
    for k in range(x.shape[1]):
        out = hook(out + x.data[:, k, None] * w.data[k, :])
    return Tensor(hook(out + b.data))


def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if tape is not None:
        mask = x.data > 0
        tape.record("relu", (x,), out, lambda g: (g * mask,),
                    lambda: np.maximum(x.data, 0.0))
    return out


def maxpool2d(x: Tensor, window: int, stride: int, tape: Optional[Tape] = None) -> Tensor:
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1, got {window}, {stride}")
    if x.shape[1] < window or x.shape[2] < window:
        raise ShapeError(
            f"maxpool window {window} larger than input {list(x.shape)}")
    o, arg = kernels.maxpool_forward(x.data, window, stride)
    out = Tensor(o)
    if tape is not None:
        h, w = x.shape[1], x.shape[2]
        tape.record(
            "maxpool2d", (x,), out,
            lambda g: (kernels.maxpool_backward(np.ascontiguousarray(g), arg, h, w),),
            lambda: kernels.maxpool_forward(x.data, window, stride)[0])
    return out


def reshape(x: Tensor, shape, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    if tape is not None:
        tape.record("reshape", (x,), out, lambda g: (g.reshape(x.shape),),
                    lambda: x.data.reshape(shape))
    return out


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {list(a.shape)} vs {list(b.shape)}")
    out = Tensor(a.data + b.data)
    if tape is not None:
        tape.record("add", (a, b), out, lambda g: (g, g), lambda: a.data + b.data)
    return out


def scale(x: Tensor, a: float, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(x.data * a)
    if tape is not None:
        tape.record("scale", (x,), out, lambda g: (g * a,), lambda: x.data * a)
    return out


def sparsify(x: Tensor, fn, tape: Optional[Tape] = None) -> Tensor:
    """Apply a value-zeroing operator `fn`; gradient passes through the
    surviving entries only (straight-through on the support)."""
    out = Tensor(fn(x.data))
    if tape is not None:
        mask = out.data != 0.0
        tape.record("sparsify", (x,), out, lambda g: (g * mask,),
                    lambda: fn(x.data))
    return out


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
              mode: str, momentum: float = 0.9, eps: float = 1e-5,
              tape: Optional[Tape] = None) -> Tensor:
    """Per-channel batch normalization over NHWC input.

    Train mode normalizes by batch statistics and updates the running
    arrays in place; eval mode uses the running statistics.
    """
    axes = (0, 1, 2)
    if mode == "train":
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = Tensor(xhat * gamma.data + beta.data)
    if tape is not None:
        if mode != "train":
            def backward_eval(g):
                return g * (gamma.data * inv), (g * xhat).sum(axis=axes), g.sum(axis=axes)
            tape.record("batchnorm", (x, gamma, beta), out,
                        backward_eval, lambda: xhat * gamma.data + beta.data)
        else:
            m = x.data.shape[0] * x.data.shape[1] * x.data.shape[2]

            def backward_train(g):
                dgamma = (g * xhat).sum(axis=axes)
                dbeta = g.sum(axis=axes)
                gx = g * gamma.data
                dx = (inv / m) * (m * gx - gx.sum(axis=axes) - xhat * (gx * xhat).sum(axis=axes))
                return dx, dgamma, dbeta

            tape.record("batchnorm", (x, gamma, beta), out,
                        backward_train, lambda: xhat * gamma.data + beta.data)
    return out


def softmax_cross_entropy(logits: Tensor, labels, tape: Optional[Tape] = None) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-shifted."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {list(labels.shape)} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(
            f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")

    def compute(z):
        shifted = z - z.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(shifted).sum(axis=1))
        return np.array((logsumexp - shifted[np.arange(n), labels]).mean())

    out = Tensor(compute(logits.data))
    if tape is not None:
        shifted = logits.data - logits.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)

        def backward_fn(g):
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            return (float(g) * d / n,)

        tape.record("softmax_cross_entropy", (logits,), out, backward_fn,
                    lambda: compute(logits.data))
    return out
