"""Scoped layer-graph models: lenet, cifarnet and a small residual net.

Scopes follow the hierarchical convention "conv1", "fc3",
"block1/unit_2/conv3". Trainable layers are partitioned into named blocks;
each block has an activation tap (the output of its last activation) used
for activation-sparsity measurement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

GAUSSIAN_INIT_STD = 0.05

# layer kinds that carry trainable parameters
PARAM_KINDS = {"conv", "dense", "logits", "batchnorm"}
# layer kinds whose kernel enters weight-sparsity accounting
WEIGHT_KINDS = {"conv", "dense", "logits"}


@dataclass
class LayerNode:
    scope: str
    kind: str  # conv|dense|relu|maxpool|batchnorm|residual-add|flatten|logits
    params: dict = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)  # batchnorm running stats


@dataclass
class ModelSpec:
    name: str
    input_shape: tuple
    num_classes: int
    layers: list
    blocks: dict  # block name -> list of trainable scopes
    taps: dict  # block name -> scope of the node whose output is the block activation
    extrinsic_points: dict  # trainable scope -> node scope carrying its output activation

    def layer(self, scope: str) -> LayerNode:
        for l in self.layers:
            if l.scope == scope:
                return l
        raise KeyError(f"no layer with scope {scope!r}")

    def weight_scopes(self):
        """Scopes of kernel-bearing layers, in topology order."""
        return [l.scope for l in self.layers if l.kind in WEIGHT_KINDS]

    def weight_tensor(self, scope: str) -> Tensor:
        node = self.layer(scope)
        key = "kernel" if node.kind == "conv" else "weights"
        return node.params[key]

    def parameters(self) -> dict:
        """All trainable parameters, keyed scope/param-name."""
        out = {}
        for l in self.layers:
            for pname, p in l.params.items():
                out[f"{l.scope}/{pname}"] = p
        return out

    def set_parameter(self, name: str, data) -> None:
        scope, _, pname = name.rpartition("/")
        node = self.layer(scope)
        if pname not in node.params:
            raise KeyError(f"layer {scope!r} has no parameter {pname!r}")
        node.params[pname] = Tensor(data, name=name)

    def copy(self) -> "ModelSpec":
        layers = [
            LayerNode(
                l.scope, l.kind,
                {k: Tensor(v.data.copy(), name=v.name) for k, v in l.params.items()},
                dict(l.attrs),
                {k: v.copy() for k, v in l.buffers.items()},
            )
            for l in self.layers
        ]
        return ModelSpec(self.name, self.input_shape, self.num_classes, layers,
                         {b: list(s) for b, s in self.blocks.items()}, dict(self.taps),
                         dict(self.extrinsic_points))


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.layers: list[LayerNode] = []
        self.blocks: dict[str, list[str]] = {}
        self.taps: dict[str, str] = {}
        self.extrinsic: dict[str, str] = {}

    def _param(self, scope, pname, shape, zero=False):
        data = np.zeros(shape) if zero else self.rng.normal(0.0, GAUSSIAN_INIT_STD, shape)
        return Tensor(data, name=f"{scope}/{pname}")

    def conv(self, scope, kh, kw, ci, co, stride=1, padding="valid"):
        self.layers.append(LayerNode(scope, "conv", {
            "kernel": self._param(scope, "kernel", (kh, kw, ci, co)),
            "bias": self._param(scope, "bias", (co,), zero=True),
        }, {"stride": stride, "padding": padding}))

    def dense_(self, scope, d, m, kind="dense"):
        self.layers.append(LayerNode(scope, kind, {
            "weights": self._param(scope, "weights", (d, m)),
            "bias": self._param(scope, "bias", (m,), zero=True),
        }))

    def batchnorm(self, scope, c):
        self.layers.append(LayerNode(scope, "batchnorm", {
            "gamma": Tensor(np.ones(c), name=f"{scope}/gamma"),
            "beta": Tensor(np.zeros(c), name=f"{scope}/beta"),
        }, {}, {"running_mean": np.zeros(c), "running_var": np.ones(c)}))

    def relu(self, scope):
        self.layers.append(LayerNode(scope, "relu"))

    def maxpool(self, scope, window, stride):
        self.layers.append(LayerNode(scope, "maxpool", {}, {"window": window, "stride": stride}))

    def flatten(self, scope):
        self.layers.append(LayerNode(scope, "flatten"))

    def residual_add(self, scope, shortcut_from):
        self.layers.append(LayerNode(scope, "residual-add", {}, {"shortcut_from": shortcut_from}))


def _build_lenet(b: _Builder, input_shape, num_classes):
    h, w, c = input_shape
    b.conv("conv1", 5, 5, c, 8)
    b.relu("conv1_relu")
    b.maxpool("pool1", 2, 2)
    b.conv("conv2", 5, 5, 8, 16)
    b.relu("conv2_relu")
    b.maxpool("pool2", 2, 2)
    b.flatten("flatten")
    d = ((h - 4) // 2 - 4) // 2 * (((w - 4) // 2 - 4) // 2) * 16
    b.dense_("fc3", d, 64)
    b.relu("fc3_relu")
    b.dense_("fc4", 64, num_classes, kind="logits")
    b.blocks = {"conv1": ["conv1"], "conv2": ["conv2"], "fc3": ["fc3"], "fc4": ["fc4"]}
    b.taps = {"conv1": "conv1_relu", "conv2": "conv2_relu", "fc3": "fc3_relu", "fc4": "fc4"}
    b.extrinsic = dict(b.taps)


def _build_cifarnet(b: _Builder, input_shape, num_classes):
    h, w, c = input_shape
    b.conv("conv1", 5, 5, c, 16, padding="same")
    b.relu("conv1_relu")
    b.maxpool("pool1", 2, 2)
    b.conv("conv2", 5, 5, 16, 16, padding="same")
    b.relu("conv2_relu")
    b.maxpool("pool2", 2, 2)
    b.flatten("flatten")
    d = (h // 4) * (w // 4) * 16
    b.dense_("fc3", d, 96)
    b.relu("fc3_relu")
    b.dense_("fc4", 96, 48)
    b.relu("fc4_relu")
    b.dense_("logits", 48, num_classes, kind="logits")
    b.blocks = {s: [s] for s in ["conv1", "conv2", "fc3", "fc4", "logits"]}
    b.taps = {"conv1": "conv1_relu", "conv2": "conv2_relu", "fc3": "fc3_relu",
              "fc4": "fc4_relu", "logits": "logits"}
    b.extrinsic = dict(b.taps)


def _bottleneck_unit(b: _Builder, scope, ci, co, stride):
    """Three convs (1x1, 3x3, 1x1) plus a shortcut; post-activation style."""
    mid = co // 2
    entry = b.layers[-1].scope  # unit input = previous node output
    names = []
    if stride != 1 or ci != co:
        b.conv(f"{scope}/shortcut", 1, 1, ci, co, stride=stride, padding="same")
        shortcut = f"{scope}/shortcut"
        names.append("shortcut")
    else:
        shortcut = entry
    b.conv(f"{scope}/conv1", 1, 1, ci, mid, stride=stride, padding="same")
    # the main branch starts from the unit input, not the shortcut output
    b.layers[-1].attrs["input_from"] = entry
    b.batchnorm(f"{scope}/bn1", mid)
    b.relu(f"{scope}/relu1")
    b.conv(f"{scope}/conv2", 3, 3, mid, mid, padding="same")
    b.batchnorm(f"{scope}/bn2", mid)
    b.relu(f"{scope}/relu2")
    b.conv(f"{scope}/conv3", 1, 1, mid, co, padding="same")
    b.batchnorm(f"{scope}/bn3", co)
    b.residual_add(f"{scope}/add", shortcut)
    b.relu(f"{scope}/relu_out")
    names += ["conv1", "bn1", "conv2", "bn2", "conv3", "bn3"]
    return [f"{scope}/{n}" for n in names]


def _build_resnet_mini(b: _Builder, input_shape, num_classes):
    h, w, c = input_shape
    b.conv("conv1", 3, 3, c, 8, padding="same")
    b.batchnorm("conv1_bn", 8)
    b.relu("conv1_relu")
    members = {"conv1": ["conv1", "conv1_bn"]}
    widths = {"block1": (8, 8, 1), "block2": (8, 16, 2)}
    for block, (ci, co, stride) in widths.items():
        ms = []
        for u in (1, 2):
            s = stride if u == 1 else 1
            cin = ci if u == 1 else co
            ms += _bottleneck_unit(b, f"{block}/unit_{u}", cin, co, s)
        members[block] = ms
    b.maxpool("pool_out", 2, 2)
    b.flatten("flatten")
    hh = -(-h // 2) // 2
    ww = -(-w // 2) // 2
    b.dense_("logits", hh * ww * 16, num_classes, kind="logits")
    members["logits"] = ["logits"]
    b.blocks = members
    b.taps = {"conv1": "conv1_relu", "block1": "block1/unit_2/relu_out",
              "block2": "block2/unit_2/relu_out", "logits": "logits"}
    b.extrinsic = {"conv1": "conv1_relu", "logits": "logits"}
    for block in widths:
        for u in (1, 2):
            for cv in ("shortcut", "conv1", "conv2", "conv3"):
                scope = f"{block}/unit_{u}/{cv}"
                if any(l.scope == scope for l in b.layers):
                    b.extrinsic[scope] = f"{block}/unit_{u}/relu_out"


_BUILDERS = {"lenet": _build_lenet, "cifarnet": _build_cifarnet,
             "resnet_mini": _build_resnet_mini}


def build_model(name: str, input_shape, num_classes: int, seed: int) -> ModelSpec:
    """Construct a named topology with Gaussian-initialized weights."""
    if name not in _BUILDERS:
        raise ValueError(
            f"unknown model {name!r}; supported: {sorted(_BUILDERS)}")
    b = _Builder(np.random.default_rng(seed))
    _BUILDERS[name](b, tuple(input_shape), num_classes)
    scopes = [l.scope for l in b.layers]
    if len(scopes) != len(set(scopes)):
        raise ValueError(f"duplicate scopes in model {name!r}")
    return ModelSpec(name, tuple(input_shape), num_classes, b.layers,
                     b.blocks, b.taps, b.extrinsic)


def forward(model: ModelSpec, batch, mode: str = "eval", tape=None, hooks=None):
    """Run the network; returns (logits Tensor, {block: activation Tensor}).

    `hooks` is a resolved table {scope: {location: SparsifierSpec}} as built
    by the hook engine; weight hooks produce effective parameters for this
    pass only, extrinsic hooks transform block activations, intrinsic hooks
    run the decomposed layer kernels (eval mode only).
    """
    batch = batch if isinstance(batch, Tensor) else Tensor(batch)
    if batch.shape[1:] != tuple(model.input_shape):
        raise T.ShapeError(
            f"batch shape {list(batch.shape[1:])} does not match model input "
            f"{list(model.input_shape)}")
    hooks = hooks or {}
    if tape is not None:
        for p in model.parameters().values():
            tape.watch(p)
    acts: dict[str, Tensor] = {}
    cur = batch
    for node in model.layers:
        layer_hooks = hooks.get(node.scope, {})
        intrinsic = layer_hooks.get("intrinsic")
        if intrinsic is not None and (mode == "train" or tape is not None):
            raise ValueError(
                f"intrinsic hook on {node.scope!r} is inference-only; "
                "training through intrinsic decomposition is not supported")
        x = acts[node.attrs["input_from"]] if "input_from" in node.attrs else cur
        if node.kind == "conv":
            w = _effective(node.params["kernel"], layer_hooks, tape)
            if intrinsic is not None:
                z = T.conv2d_intrinsic(x, w, intrinsic.apply,
                                       node.attrs["stride"], node.attrs["padding"])
            else:
                z = T.conv2d(x, w, node.attrs["stride"], node.attrs["padding"], tape)
            if tape is None:
                cur = Tensor(z.data + node.params["bias"].data)
            else:
                cur = _broadcast_add(z, node.params["bias"], tape)
        elif node.kind in ("dense", "logits"):
            w = _effective(node.params["weights"], layer_hooks, tape)
            if intrinsic is not None:
                cur = T.dense_intrinsic(x, w, node.params["bias"], intrinsic.apply)
            else:
                cur = T.dense(x, w, node.params["bias"], tape)
        elif node.kind == "relu":
            cur = T.relu(x, tape)
        elif node.kind == "maxpool":
            cur = T.maxpool2d(x, node.attrs["window"], node.attrs["stride"], tape)
        elif node.kind == "flatten":
            cur = T.reshape(x, (x.shape[0], -1), tape)
        elif node.kind == "batchnorm":
            cur = T.batchnorm(x, node.params["gamma"], node.params["beta"],
                              node.buffers["running_mean"], node.buffers["running_var"],
                              mode, tape=tape)
        elif node.kind == "residual-add":
            cur = T.add(x, acts[node.attrs["shortcut_from"]], tape)
        else:
            raise ValueError(f"unknown layer kind {node.kind!r} at {node.scope!r}")
        acts[node.scope] = cur
        ext = _extrinsic_for(model, node.scope, hooks)
        if ext is not None and not ext.is_identity:
            cur = T.sparsify(cur, ext.apply, tape)
            acts[node.scope] = cur
    logits = cur
    taps = {block: acts[scope] for block, scope in model.taps.items()}
    return logits, taps


def _broadcast_add(z: Tensor, bias: Tensor, tape):
    out = Tensor(z.data + bias.data)
    ndim = z.data.ndim
    axes = tuple(range(ndim - 1))
    tape.record("bias_add", (z, bias), out,
                lambda g: (g, g.sum(axis=axes)), lambda: z.data + bias.data)
    return out


def _effective(param: Tensor, layer_hooks, tape):
    spec = layer_hooks.get("weight")
    if spec is None or spec.is_identity:
        return param
    return T.sparsify(param, spec.apply, tape)


def _extrinsic_for(model: ModelSpec, node_scope: str, hooks):
    for trainable, point in model.extrinsic_points.items():
        if point == node_scope:
            spec = hooks.get(trainable, {}).get("extrinsic")
            if spec is not None:
                return spec
    return None
