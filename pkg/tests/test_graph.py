import json

import numpy as np
import pytest

from weldsign import graph as G
from weldsign import ops
from weldsign.tensor import ShapeError
from weldsign.train import init_weights

GRNET_TABLE = {
    "input": (224, 224, 3), "cbr": (224, 224, 64), "block1": (224, 224, 64),
    "block2": (224, 224, 64), "bdb1": (112, 112, 256), "block3": (112, 112, 256),
    "bdb2": (56, 56, 512), "block4": (56, 56, 512), "avgpool": (1, 1, 512), "fc": (1, 1, 4),
    "softmax": (1, 1, 4),
}

GYNET_TABLE = {
    "S1": (416, 416, 16), "S2": (208, 208, 16), "S3": (208, 208, 32), "S4": (104, 104, 32),
    "S5": (104, 104, 64), "S6": (52, 52, 64), "S7": (52, 52, 64), "S8": (26, 26, 64),
    "S9": (26, 26, 128), "S10": (13, 13, 128), "S11": (13, 13, 256), "S12": (13, 13, 256),
    "S13": (13, 13, 512), "S14": (13, 13, 2048), "S15": (13, 13, 128), "S16": (13, 13, 256),
    "S17": (13, 13, 135), "S18": (13, 13, 128), "S19": (26, 26, 128), "S20": (26, 26, 256),
    "S21": (26, 26, 256), "S22": (26, 26, 135),
}


def test_grnet_shapes_match_table():
    shapes = G.infer_shapes(G.build_grnet())
    for row, shape in GRNET_TABLE.items():
        assert shapes[row] == shape, row


def test_gynet_shapes_match_table():
    shapes = G.infer_shapes(G.build_gynet())
    for row, shape in GYNET_TABLE.items():
        assert shapes[row] == shape, row


def test_grnet_grouping_is_gcd():
    g = G.build_grnet()
    convs = [l for l in g.layers if l.kind in G.CONV_KINDS]
    shapes = G.infer_shapes(g)
    for l in convs:
        c_in = shapes[l.inputs[0]][-1]
        assert l.attrs["groups"] == ops.group_count(c_in, l.attrs["filters"])
    assert g.layer("cbr.conv").attrs["groups"] == 1
    assert g.layer("block1.cbr.conv").attrs["groups"] == 64
    assert g.layer("bdb1.cbr.conv").attrs["groups"] == 64
    assert g.layer("bdb2.cbr.conv").attrs["groups"] == 256


def test_grnet_depth():
    g = G.build_grnet()
    assert G.weighted_depth(g) == 14
    assert sum(l.kind in G.CONV_KINDS for l in g.layers) == 15


def test_gynet_heads_and_branch_sources():
    g = G.build_gynet()
    assert g.outputs == ["S17", "S22"]
    assert G.HEAD_CHANNELS == 3 * (40 + 5) == 135
    assert g.layer("S18.conv").inputs == ["S15"]
    assert g.layer("S20").inputs == ["S19", "S9"]
    assert g.layer("S12").attrs["padding"] == [0, 1, 0, 1]


def test_baseline_rewires_s13_to_s15():
    g = G.build_gynet("gynet-baseline")
    assert g.layer("S15.conv").inputs == ["S13"]
    assert G.infer_shapes(g)["S13"][-1] == 512
    assert all(l.kind != "sce" for l in g.layers)


def test_builders_deterministic():
    assert G.build_gynet().to_json() == G.build_gynet().to_json()
    assert G.build_grnet().to_json() == G.build_grnet().to_json()


def test_json_roundtrip():
    g = G.build_gynet("gynet-sib")
    back = G.NetGraph.from_json(g.to_json())
    assert back.to_dict() == g.to_dict()
    json.loads(g.to_json())


def test_size_formula():
    g = G.NetGraph("t", [G.LayerSpec("c", "conv", ["input"], dict(
        kernel=3, stride=2, padding=[1, 1, 1, 1], filters=1, groups=1, bias=False))], ["c"], (5, 5, 1))
    assert G.infer_shapes(g)["c"] == (3, 3, 1)


def test_graph_validation_errors():
    with pytest.raises(G.GraphError):
        G.NetGraph("bad", [G.LayerSpec("r", "relu", ["nope"])], ["r"])
    with pytest.raises(G.GraphError):
        G.NetGraph("bad", [G.LayerSpec("r", "mystery", ["input"])], ["r"])
    with pytest.raises(G.GraphError):
        G.NetGraph("bad", [G.LayerSpec("r", "relu", ["input"])], ["x"])
    with pytest.raises(G.GraphError):
        G.NetGraph("bad", [G.LayerSpec("r", "relu", ["input"]), G.LayerSpec("r", "relu", ["input"])], ["r"])
    with pytest.raises(G.GraphError):
        G.NetGraph("bad", [G.LayerSpec("c", "conv", ["input"], dict(kernel=3))], ["c"])


def test_shape_conflict_names_layer():
    layers = [G.LayerSpec("p", "maxpool", ["input"], dict(kernel=2, stride=2, padding=0)),
              G.LayerSpec("a", "add", ["input", "p"])]
    with pytest.raises(ShapeError, match="layer a"):
        G.infer_shapes(G.NetGraph("bad", layers, ["a"], (4, 4, 1)))


def test_execute_single_relu(rng):
    g = G.NetGraph("r", [G.LayerSpec("r", "relu", ["input"])], ["r"], (4, 4, 2))
    x = rng.normal(size=(4, 4, 2)).astype(np.float32)
    np.testing.assert_array_equal(G.execute(g, {}, x)["r"], ops.relu(x))


def test_execute_grnet_softmax_contract(rng):
    g = G.build_grnet(width=0.25)
    w = init_weights(g, 1)
    out = G.execute(g, w, rng.uniform(size=(224, 224, 3)).astype(np.float32))["softmax"]
    assert out.shape == (1, 1, 4)
    assert abs(float(out.sum()) - 1) < 1e-5


def test_execute_shapes_match_inference(rng):
    g = G.build_grnet(width=1 / 16, input_size=32)
    w = init_weights(g, 2)
    shapes = G.infer_shapes(g)
    ids = [l.id for l in g.layers]
    acts = G.forward(g, w, rng.uniform(size=(1, 32, 32, 3)).astype(np.float32), keep=ids)
    for lid in ids:
        assert acts[lid].shape[1:] == shapes[lid]


def test_execute_rejects_missing_or_bad_weight(rng):
    g = G.build_grnet(width=1 / 16, input_size=32)
    w = init_weights(g, 2)
    x = np.zeros((32, 32, 3), np.float32)
    broken = dict(w)
    del broken["fc.weight"]
    with pytest.raises(G.WeightError, match="fc"):
        G.execute(g, broken, x)
    broken = dict(w)
    broken["cbr.conv.weight"] = np.zeros((3, 3, 3, 1), np.float32)
    with pytest.raises(G.WeightError, match="cbr.conv"):
        G.execute(g, broken, x)


def test_unknown_model():
    with pytest.raises(G.GraphError):
        G.build_model("resnet")
