"""Static Params / FLOPs / Madds / model-size accounting over a NetGraph.

Conventions (recorded in every report):

* one multiply-accumulate counts as one FLOP, and Madds = 2 x FLOPs;
* BN, pooling, activations, upsample and concat cost nothing unless
  ``count_cheap_ops`` is set;
* params count every stored float, BN running statistics included, so
  that the total equals the element count of a weight file for the graph;
* size is 4 bytes per param, reported in MB of 10**6 bytes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import graph as G
from . import sce

BYTES_PER_PARAM = 4
MB = 1e6


@dataclass
class LayerCost:
    id: str
    kind: str
    out_shape: tuple
    params: int
    flops: int
    madds: int


@dataclass
class CostReport:
    model: str
    input_shape: tuple
    layers: list = field(default_factory=list)
    params: int = 0
    flops: int = 0
    madds: int = 0
    size_bytes: int = 0
    conventions: dict = field(default_factory=dict)

    @property
    def size_mb(self):
        return self.size_bytes / MB

    def to_dict(self):
        d = asdict(self)
        d["size_mb"] = self.size_mb
        d["input_shape"] = list(self.input_shape)
        for row in d["layers"]:
            row["out_shape"] = list(row["out_shape"])
        return d


def _layer_cost(layer, in_shape, out_shape, count_bn, count_cheap):
    a = layer.attrs
    kind = layer.kind
    out_elems = int(np.prod(out_shape))
    if kind in G.CONV_KINDS:
        params = (a["kernel"] ** 2 * (in_shape[-1] // a["groups"]) * a["filters"]
                  + (a["filters"] if a["bias"] else 0))
        return params, out_shape[0] * out_shape[1] * params
    if kind == "fc":
        n_in = int(np.prod(in_shape))
        return n_in * a["units"] + (a["units"] if a["bias"] else 0), n_in * a["units"]
    if kind == "bn":
        params = 4 * in_shape[-1] if count_bn else 0
        return params, (2 * out_elems if count_cheap else 0)
    if kind == "sce":
        c = out_shape[-1]
        params = 0
        flops = 0
        if a["weighting"]:
            params = sce.sce_param_count(in_shape[-1], a["r"], len(a["pyramid"]), a["fc_bias"])
            flops = 2 * c * (c // a["r"])
        if count_cheap:
            hw = out_shape[0] * out_shape[1]
            flops += sum(k * k for k in a["pyramid"] if k > 1) * hw * in_shape[-1]
            if a["weighting"]:
                flops += 2 * out_elems
        return params, flops
    if not count_cheap:
        return 0, 0
    if kind == "maxpool":
        return 0, a["kernel"] ** 2 * out_elems
    if kind in ("relu", "sigmoid", "softmax", "add", "avgpool-global"):
        return 0, int(np.prod(in_shape))
    return 0, 0


def analyze(graph: G.NetGraph, input_shape=None, count_bn=True, count_cheap_ops=False):
    """Per-layer and total cost; raises ``ShapeError`` if shapes cannot be inferred."""
    input_shape = tuple(input_shape or graph.input_shape)
    shapes = G.infer_shapes(graph, input_shape)
    report = CostReport(graph.name, input_shape, conventions={
        "flop": "MAC", "madds_per_flop": 2, "bytes_per_param": BYTES_PER_PARAM,
        "bn_counted": count_bn, "pool_counted": count_cheap_ops,
        "activation_counted": count_cheap_ops, "mb": "1e6 bytes",
    })
    for layer in graph.layers:
        params, flops = _layer_cost(layer, shapes[layer.inputs[0]], shapes[layer.id],
                                    count_bn, count_cheap_ops)
        report.layers.append(LayerCost(layer.id, layer.kind, shapes[layer.id],
                                       params, flops, 2 * flops))
    report.params = sum(r.params for r in report.layers)
    report.flops = sum(r.flops for r in report.layers)
    report.madds = 2 * report.flops
    report.size_bytes = BYTES_PER_PARAM * report.params
    return report


# reported figures; tolerances are relative ("rel") or absolute ("abs")
PAPER_REFERENCE = {
    "gynet": {
        "params": (4.9e6, "rel", 0.02),
        "size_mb": (19.9, "rel", 0.02),
        "flops": (2.8e9, "rel", 0.10),
        "madds": (5.6e9, "rel", 0.10),
    },
    "gynet-baseline": {
        "params": (2.6e6, "abs", 0.1e6),
        "size_mb": (10.7, "abs", 0.5),
    },
    "gynet-sib": {
        "params": (2.8e6, "abs", 0.1e6),
    },
    "gynet-cwb": {
        "params": (2.8e6, "abs", 0.1e6),
    },
    "grnet": {
        "params": (0.2e6, "rel", 0.02),
        "size_mb": (0.8, "rel", 0.02),
        "flops": (1.1e9, "rel", 0.10),
        "madds": (2.1e9, "rel", 0.10),
    },
}


@dataclass
class CheckRow:
    metric: str
    value: float
    expected: float
    rel_error: float
    tolerance: str
    passed: bool


def compare_to_reference(report: CostReport, reference: dict):
    """Per-metric pass/fail rows and the overall verdict."""
    rows = []
    for metric, (expected, mode, tol) in reference.items():
        value = float(getattr(report, metric))
        rel = abs(value - expected) / abs(expected) if expected else float("inf")
        ok = (rel <= tol) if mode == "rel" else (abs(value - expected) <= tol)
        desc = f"±{tol:.0%}" if mode == "rel" else f"±{tol:g}"
        rows.append(CheckRow(metric, value, expected, rel, desc, ok))
    return rows, all(r.passed for r in rows)


def format_table(report: CostReport, sep="\t"):
    head = sep.join(["id", "kind", "out_shape", "params", "flops", "madds"])
    lines = [head]
    for r in report.layers:
        shape = "x".join(str(d) for d in r.out_shape)
        lines.append(sep.join([r.id, r.kind, shape, str(r.params), str(r.flops), str(r.madds)]))
    lines.append(sep.join(["TOTAL", "", "", str(report.params), str(report.flops), str(report.madds)]))
    return "\n".join(lines)


def format_summary(report: CostReport):
    return (f"{report.model} @ {'x'.join(map(str, report.input_shape))}: "
            f"Params {report.params / 1e6:.3f}M  FLOPs {report.flops / 1e9:.3f}G  "
            f"Madds {report.madds / 1e9:.3f}G  Size {report.size_mb:.2f}MB")
