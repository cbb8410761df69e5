"""Declarative network graphs, the two network builders and the executor.

A :class:`NetGraph` is an ordered list of :class:`LayerSpec`; the reserved
id ``"input"`` names the image fed to the network. Parameter tensors are
keyed ``"<layer id>.<name>"`` (``S1.conv.weight``, ``S1.bn.gamma``, ...).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import ops, sce
from .tensor import ShapeError

INPUT = "input"

KINDS = {
    "conv", "group-conv", "bn", "relu", "maxpool", "avgpool-global", "fc", "softmax",
    "sigmoid", "upsample2x", "concat", "add", "sce", "yolo-head",
}
CONV_KINDS = {"conv", "group-conv", "yolo-head"}
REQUIRED_ATTRS = {
    "conv": {"kernel", "stride", "padding", "filters", "groups", "bias"},
    "group-conv": {"kernel", "stride", "padding", "filters", "groups", "bias"},
    "yolo-head": {"kernel", "stride", "padding", "filters", "groups", "bias",
                  "num_classes", "num_anchors"},
    "maxpool": {"kernel", "stride", "padding"},
    "fc": {"units", "bias"},
    "sce": {"pyramid", "r", "weighting", "fc_bias"},
}

NUM_CLASSES = 40
NUM_ANCHORS = 3
HEAD_CHANNELS = NUM_ANCHORS * (NUM_CLASSES + 5)


class GraphError(ValueError):
    pass


class WeightError(KeyError):
    """A parameter is missing or has the wrong shape; names the layer."""

    def __str__(self):
        return str(self.args[0]) if self.args else "weight error"


@dataclass
class LayerSpec:
    id: str
    kind: str
    inputs: list
    attrs: dict = field(default_factory=dict)

    def to_dict(self):
        return {"id": self.id, "kind": self.kind, "inputs": list(self.inputs),
                "attrs": dict(self.attrs)}


@dataclass
class NetGraph:
    name: str
    layers: list
    outputs: list
    input_shape: tuple = (224, 224, 3)

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen = {INPUT}
        for layer in self.layers:
            if layer.kind not in KINDS:
                raise GraphError(f"layer {layer.id}: unknown kind {layer.kind!r}")
            if layer.id in seen:
                raise GraphError(f"duplicate layer id {layer.id!r}")
            missing = REQUIRED_ATTRS.get(layer.kind, set()) - set(layer.attrs)
            if missing:
                raise GraphError(f"layer {layer.id}: missing attributes {sorted(missing)}")
            for src in layer.inputs:
                if src not in seen:
                    raise GraphError(f"layer {layer.id}: input {src!r} is not defined earlier")
            n_in = len(layer.inputs)
            if layer.kind in ("concat", "add") and n_in < 2:
                raise GraphError(f"layer {layer.id}: {layer.kind} needs >= 2 inputs")
            if layer.kind not in ("concat", "add") and n_in != 1:
                raise GraphError(f"layer {layer.id}: {layer.kind} takes exactly one input")
            seen.add(layer.id)
        for out in self.outputs:
            if out not in seen:
                raise GraphError(f"output {out!r} is not a layer")

    def layer(self, layer_id):
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def to_dict(self):
        return {"name": self.name, "input_shape": list(self.input_shape),
                "outputs": list(self.outputs), "layers": [l.to_dict() for l in self.layers]}

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d):
        layers = [LayerSpec(l["id"], l["kind"], list(l["inputs"]), dict(l.get("attrs", {})))
                  for l in d["layers"]]
        return cls(d["name"], layers, list(d["outputs"]), tuple(d["input_shape"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


class _Builder:
    def __init__(self):
        self.layers = []

    def add(self, layer_id, kind, inputs, **attrs):
        if isinstance(inputs, str):
            inputs = [inputs]
        self.layers.append(LayerSpec(layer_id, kind, list(inputs), attrs))
        return layer_id

    def conv(self, layer_id, src, filters, kernel, stride=1, groups=1, bias=False, padding=None):
        if padding is None:
            padding = list(sce.same_padding(kernel))
        kind = "group-conv" if groups > 1 else "conv"
        return self.add(layer_id, kind, src, kernel=kernel, stride=stride, padding=list(padding),
                        filters=filters, groups=groups, bias=bias)

    def cbr(self, prefix, src, filters, kernel, stride=1, groups=1, final_id=None):
        c = self.conv(f"{prefix}.conv", src, filters, kernel, stride, groups)
        b = self.add(f"{prefix}.bn", "bn", c)
        return self.add(final_id or f"{prefix}.relu", "relu", b)


# ---------------------------------------------------------------- GRNet

def _basic_block(b, name, src, c):
    g = ops.group_count(c, c)
    h = b.cbr(f"{name}.cbr", src, c, 3, 1, g)
    h = b.conv(f"{name}.conv2", h, c, 3, 1, g)
    h = b.add(f"{name}.bn2", "bn", h)
    s = b.add(f"{name}.add", "add", [h, src])
    return b.add(name, "relu", s)


def _bdb(b, name, src, c_in, c_out):
    g_io = ops.group_count(c_in, c_out)
    g_oo = ops.group_count(c_out, c_out)
    h = b.cbr(f"{name}.cbr", src, c_out, 3, 2, g_io)
    h = b.conv(f"{name}.conv2", h, c_out, 3, 1, g_oo)
    h = b.add(f"{name}.bn2", "bn", h)
    p = b.add(f"{name}.pool", "maxpool", src, kernel=2, stride=2, padding=[0, 0, 0, 0])
    p = b.conv(f"{name}.pconv", p, c_out, 3, 1, g_io)
    p = b.add(f"{name}.pbn", "bn", p)
    s = b.add(f"{name}.add", "add", [h, p])
    return b.add(name, "relu", s)


GRNET_ROWS = ["cbr", "block1", "block2", "bdb1", "block3", "bdb2", "block4", "avgpool", "fc"]


def build_grnet(width=1.0, num_classes=4, input_size=224):
    """GRNet; ``width=0.25`` gives the width-quartered miniature (16/64/128)."""
    c1, c2, c3 = (max(1, int(round(c * width))) for c in (64, 256, 512))
    b = _Builder()
    h = b.cbr("cbr", INPUT, c1, 3, 1, ops.group_count(3, c1), final_id="cbr")
    h = _basic_block(b, "block1", h, c1)
    h = _basic_block(b, "block2", h, c1)
    h = _bdb(b, "bdb1", h, c1, c2)
    h = _basic_block(b, "block3", h, c2)
    h = _bdb(b, "bdb2", h, c2, c3)
    h = _basic_block(b, "block4", h, c3)
    h = b.add("avgpool", "avgpool-global", h)
    h = b.add("fc", "fc", h, units=num_classes, bias=True)
    b.add("softmax", "softmax", h)
    name = "grnet" if width == 1.0 else f"grnet-w{width:g}"
    return NetGraph(name, b.layers, ["softmax"], (input_size, input_size, 3))


# ---------------------------------------------------------------- GYNet

GYNET_BACKBONE = [  # (row, kind, filters, kernel, stride)
    ("S1", "conv", 16, 3, 1), ("S2", "maxpool", None, 2, 2),
    ("S3", "conv", 32, 3, 1), ("S4", "maxpool", None, 2, 2),
    ("S5", "conv", 64, 3, 1), ("S6", "maxpool", None, 2, 2),
    ("S7", "conv", 64, 3, 1), ("S8", "maxpool", None, 2, 2),
    ("S9", "conv", 128, 3, 1), ("S10", "maxpool", None, 2, 2),
    ("S11", "conv", 256, 3, 1), ("S12", "maxpool", None, 2, 1),
    ("S13", "conv", 512, 3, 1),
]

GYNET_VARIANTS = {
    # name: (spatial integration, channel weighting)
    "gynet": (True, True),
    "gynet-baseline": (False, False),
    "gynet-sib": (True, False),
    "gynet-cwb": (False, True),
}


def build_gynet(variant="gynet", input_size=416, num_classes=NUM_CLASSES):
    """GYNet and its SCE ablation variants (see ``GYNET_VARIANTS``)."""
    use_sib, use_cwb = GYNET_VARIANTS[variant]
    head = NUM_ANCHORS * (num_classes + 5)
    b = _Builder()
    h = INPUT
    for row, kind, filters, kernel, stride in GYNET_BACKBONE:
        if kind == "conv":
            h = b.cbr(row, h, filters, kernel, stride, final_id=row)
        elif stride == 1:
            # even kernel at stride 1: pad bottom/right only to keep 13x13
            h = b.add(row, "maxpool", h, kernel=kernel, stride=1, padding=[0, 1, 0, 1])
        else:
            h = b.add(row, "maxpool", h, kernel=kernel, stride=stride, padding=[0, 0, 0, 0])
    if use_sib or use_cwb:
        h = b.add("S14", "sce", h, pyramid=list(sce.PYRAMID if use_sib else (1,)),
                  r=sce.REDUCTION, weighting=use_cwb, fc_bias=True)
    s15 = b.cbr("S15", h, 128, 1, final_id="S15")
    h = b.cbr("S16", s15, 256, 1, final_id="S16")
    b.add("S17", "yolo-head", h, kernel=1, stride=1, padding=[0, 0, 0, 0], filters=head,
          groups=1, bias=True, num_classes=num_classes, num_anchors=NUM_ANCHORS)
    h = b.cbr("S18", s15, 128, 1, final_id="S18")
    h = b.add("S19", "upsample2x", h)
    h = b.add("S20", "concat", [h, "S9"])
    h = b.cbr("S21", h, 256, 3, final_id="S21")
    b.add("S22", "yolo-head", h, kernel=3, stride=1, padding=[1, 1, 1, 1], filters=head,
          groups=1, bias=True, num_classes=num_classes, num_anchors=NUM_ANCHORS)
    return NetGraph(variant, b.layers, ["S17", "S22"], (input_size, input_size, 3))


MODELS = {
    "grnet": lambda: build_grnet(),
    "grnet-mini": lambda: build_grnet(width=0.25),
    **{name: (lambda n=name: build_gynet(n)) for name in GYNET_VARIANTS},
}


def build_model(name):
    try:
        return MODELS[name]()
    except KeyError:
        raise GraphError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


# ---------------------------------------------------------------- shapes

def _layer_shape(layer, in_shapes):
    a = layer.attrs
    kind = layer.kind
    s = in_shapes[0]
    if kind in CONV_KINDS:
        h, w, c = s
        t, bt, l, r = ops.normalize_padding(a["padding"])
        if c % a["groups"] or a["filters"] % a["groups"]:
            raise ShapeError(f"groups={a['groups']} does not divide {c}->{a['filters']}")
        ho = ops.out_size(h, a["kernel"], a["stride"], t, bt)
        wo = ops.out_size(w, a["kernel"], a["stride"], l, r)
        if ho < 1 or wo < 1:
            raise ShapeError(f"empty output from {s}")
        return (ho, wo, a["filters"])
    if kind == "maxpool":
        h, w, c = s
        t, bt, l, r = ops.normalize_padding(a["padding"])
        ho = ops.out_size(h, a["kernel"], a["stride"], t, bt)
        wo = ops.out_size(w, a["kernel"], a["stride"], l, r)
        if ho < 1 or wo < 1:
            raise ShapeError(f"empty output from {s}")
        return (ho, wo, c)
    if kind in ("bn", "relu", "softmax", "sigmoid"):
        return s
    if kind == "avgpool-global":
        return (1, 1, s[-1])
    if kind == "fc":
        return (1, 1, a["units"])
    if kind == "upsample2x":
        return (2 * s[0], 2 * s[1], s[2])
    if kind == "add":
        if any(t != s for t in in_shapes):
            raise ShapeError(f"add inputs disagree: {in_shapes}")
        return s
    if kind == "concat":
        if any(t[:2] != s[:2] for t in in_shapes):
            raise ShapeError(f"concat spatial mismatch: {in_shapes}")
        return (s[0], s[1], sum(t[2] for t in in_shapes))
    if kind == "sce":
        c = s[2] * len(a["pyramid"])
        if c % a["r"]:
            raise ShapeError(f"r={a['r']} does not divide {c}")
        return (s[0], s[1], c)
    raise ShapeError(f"no shape rule for {kind}")


def infer_shapes(graph: NetGraph, input_shape=None):
    """Map every layer id (and ``"input"``) to its ``(H, W, C)`` output shape."""
    shapes = {INPUT: tuple(input_shape or graph.input_shape)}
    for layer in graph.layers:
        try:
            shapes[layer.id] = _layer_shape(layer, [shapes[i] for i in layer.inputs])
        except ShapeError as e:
            raise ShapeError(f"layer {layer.id}: {e}") from None
    return shapes


def param_shapes(graph: NetGraph, input_shape=None):
    """Ordered ``name -> shape`` of every parameter tensor the graph needs."""
    shapes = infer_shapes(graph, input_shape)
    out = {}
    for layer in graph.layers:
        a = layer.attrs
        c_in = shapes[layer.inputs[0]][-1]
        if layer.kind in CONV_KINDS:
            k = a["kernel"]
            out[f"{layer.id}.weight"] = (k, k, c_in // a["groups"], a["filters"])
            if a["bias"]:
                out[f"{layer.id}.bias"] = (a["filters"],)
        elif layer.kind == "bn":
            for name in ("gamma", "beta", "running_mean", "running_var"):
                out[f"{layer.id}.{name}"] = (c_in,)
        elif layer.kind == "fc":
            n_in = int(np.prod(shapes[layer.inputs[0]]))
            out[f"{layer.id}.weight"] = (n_in, a["units"])
            if a["bias"]:
                out[f"{layer.id}.bias"] = (a["units"],)
        elif layer.kind == "sce" and a["weighting"]:
            c = shapes[layer.id][-1]
            hidden = c // a["r"]
            out[f"{layer.id}.fc1.weight"] = (c, hidden)
            if a["fc_bias"]:
                out[f"{layer.id}.fc1.bias"] = (hidden,)
            out[f"{layer.id}.fc2.weight"] = (hidden, c)
            if a["fc_bias"]:
                out[f"{layer.id}.fc2.bias"] = (c,)
    return out


def check_weights(graph: NetGraph, weights, input_shape=None):
    for name, shape in param_shapes(graph, input_shape).items():
        layer_id = name.rsplit(".", 1)[0]
        if name not in weights:
            raise WeightError(f"layer {layer_id}: missing weight {name!r}")
        got = tuple(weights[name].shape)
        if got != tuple(shape):
            raise WeightError(f"layer {layer_id}: weight {name!r} has shape {got}, expected {shape}")


def weighted_depth(graph: NetGraph):
    """Longest input-to-output chain of conv/fc layers (ResNet-style depth)."""
    depth = {INPUT: 0}
    for layer in graph.layers:
        d = max(depth[i] for i in layer.inputs)
        depth[layer.id] = d + (1 if layer.kind in CONV_KINDS | {"fc"} else 0)
    return max(depth[o] for o in graph.outputs)


def row_outputs(graph: NetGraph, rows: Iterable[str], shapes=None):
    shapes = shapes or infer_shapes(graph)
    return {r: shapes[r] for r in rows}


# ---------------------------------------------------------------- execution

def forward(graph: NetGraph, weights, x, training=False, tape=None, keep=None):
    """Batched forward pass over ``x`` of shape ``(N, H, W, C)``.

    In training mode BN uses batch statistics and appends ``(name, batch
    mean, batch var, count)`` to ``tape["bn_stats"]``; per-layer caches for
    the backward pass go to ``tape["cache"]`` when ``tape`` is given.
    Returns ``{layer id: activation}`` for the graph outputs and ``keep``.
    """
    acts = {INPUT: x}
    wanted = set(graph.outputs) | set(keep or ())
    # drop activations as soon as nothing downstream needs them
    last_use = {}
    for idx, layer in enumerate(graph.layers):
        for i in layer.inputs:
            last_use[i] = idx
    for idx, layer in enumerate(graph.layers):
        ins = [acts[i] for i in layer.inputs]
        acts[layer.id] = _forward_layer(layer, ins, weights, training, tape)
        # the tape keeps its own references to whatever backward needs
        for i in layer.inputs:
            if last_use.get(i) == idx and i not in wanted:
                del acts[i]
    return {k: acts[k] for k in wanted}


def _forward_layer(layer, ins, weights, training, tape):
    a = layer.attrs
    lid = layer.id
    x = ins[0]
    kind = layer.kind
    cache = None
    if kind in CONV_KINDS:
        bias = weights[f"{lid}.bias"] if a["bias"] else None
        y = ops.conv2d(x, weights[f"{lid}.weight"], bias, a["stride"], a["padding"], a["groups"])
        cache = x
    elif kind == "bn":
        g, bt = weights[f"{lid}.gamma"], weights[f"{lid}.beta"]
        if training:
            y, cache, mean, var = ops.batchnorm_train_forward(x, g, bt)
            if tape is not None:
                tape.setdefault("bn_stats", []).append((lid, mean, var, x.size // x.shape[-1]))
        else:
            y = ops.batchnorm_infer(x, g, bt, weights[f"{lid}.running_mean"],
                                    weights[f"{lid}.running_var"])
    elif kind == "relu":
        y = ops.relu(x)
        cache = y  # y > 0 exactly where x > 0, and y is kept alive downstream anyway
    elif kind == "maxpool":
        y = ops.maxpool(x, a["kernel"], a["stride"], a["padding"])
        cache = x
    elif kind == "avgpool-global":
        y = ops.global_avgpool(x)
        cache = x.shape
    elif kind == "fc":
        bias = weights[f"{lid}.bias"] if a["bias"] else np.zeros(a["units"], x.dtype)
        flat = x.reshape(x.shape[0], -1)
        y = ops.fully_connected(flat, weights[f"{lid}.weight"], bias).reshape(x.shape[0], 1, 1, -1)
        cache = x
    elif kind == "softmax":
        y = ops.softmax(x)
        cache = y
    elif kind == "sigmoid":
        y = ops.sigmoid(x)
    elif kind == "upsample2x":
        y = ops.upsample_nearest_2x(x)
    elif kind == "concat":
        y = np.concatenate(ins, axis=-1)
    elif kind == "add":
        y = ins[0]
        for other in ins[1:]:
            y = y + other
    elif kind == "sce":
        o = sce.spatial_integration(x, tuple(a["pyramid"]))
        if a["weighting"]:
            s = sce.channel_weights(o, weights[f"{lid}.fc1.weight"], weights.get(f"{lid}.fc1.bias"),
                                    weights[f"{lid}.fc2.weight"], weights.get(f"{lid}.fc2.bias"))
            y = o * s
        else:
            y = o
    else:
        raise GraphError(f"cannot execute kind {kind}")
    if tape is not None:
        tape.setdefault("cache", {})[lid] = cache
    return y.astype(x.dtype, copy=False)


def execute(graph: NetGraph, weights, image):
    """Run one ``H x W x C`` image; returns ``{output id: tensor}`` (batch dim dropped)."""
    check_weights(graph, weights, image.shape)
    infer_shapes(graph, image.shape)
    outs = forward(graph, weights, np.asarray(image, dtype=np.float32)[None])
    return {k: v[0] for k, v in outs.items()}
