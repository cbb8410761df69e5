import numpy as np
import pytest

from weldsign import cost, ops
from weldsign import graph as G
from weldsign.train import init_weights


def conv_graph(c, groups, size=8):
    return G.NetGraph("c", [G.LayerSpec("c", "group-conv" if groups > 1 else "conv", ["input"], dict(
        kernel=3, stride=1, padding=[1, 1, 1, 1], filters=c, groups=groups, bias=False))],
        ["c"], (size, size, c))


@pytest.mark.parametrize("model", sorted(G.MODELS))
def test_params_equal_weight_file_floats(model):
    g = G.build_model(model)
    shapes = G.param_shapes(g)
    assert cost.analyze(g).params == sum(int(np.prod(s)) for s in shapes.values())


def test_weight_store_float_count_matches():
    g = G.build_model("grnet-mini")
    assert init_weights(g, 0).num_floats() == cost.analyze(g).params


def test_totals_are_column_sums_and_conventions():
    r = cost.analyze(G.build_gynet())
    assert r.params == sum(l.params for l in r.layers)
    assert r.flops == sum(l.flops for l in r.layers)
    assert r.madds == 2 * r.flops
    assert r.size_bytes == 4 * r.params
    assert r.conventions["flop"] == "MAC"


def test_gynet_params_and_size():
    r = cost.analyze(G.build_gynet())
    assert abs(r.params - 4.9e6) / 4.9e6 <= 0.02
    assert abs(r.size_mb - 19.9) / 19.9 <= 0.02


def test_ablation_variants():
    base = cost.analyze(G.build_gynet("gynet-baseline"))
    assert abs(base.params - 2.6e6) <= 0.1e6
    assert abs(base.size_mb - 10.7) <= 0.5
    sib = cost.analyze(G.build_gynet("gynet-sib"))
    assert abs(sib.params - 2.8e6) <= 0.1e6
    full = cost.analyze(G.build_gynet())
    assert full.params - sib.params == 2_099_712


@pytest.mark.parametrize("c", [8, 64, 512])
def test_group_param_ratio(c):
    normal = cost.analyze(conv_graph(c, 1)).params
    grouped = cost.analyze(conv_graph(c, c)).params
    assert normal == c * grouped


def test_conv_flops_formula():
    r = cost.analyze(conv_graph(8, 2, size=5))
    assert r.params == 9 * 4 * 8
    assert r.flops == 25 * r.params


def test_doubling_input_quadruples_flops():
    g = G.build_grnet(width=0.25)
    a = cost.analyze(g, (112, 112, 3))
    b = cost.analyze(g, (224, 224, 3))
    conv_a = sum(l.flops for l in a.layers if l.kind in G.CONV_KINDS)
    conv_b = sum(l.flops for l in b.layers if l.kind in G.CONV_KINDS)
    assert conv_b == 4 * conv_a and a.params == b.params


def test_adding_parameterized_layer_increases_params():
    base = G.build_gynet("gynet-baseline")
    more = G.build_gynet("gynet-cwb")
    assert cost.analyze(more).params > cost.analyze(base).params
    layers = list(base.layers) + [G.LayerSpec("extra", "conv", ["S22"], dict(
        kernel=1, stride=1, padding=0, filters=4, groups=1, bias=False))]
    g2 = G.NetGraph("x", layers, ["extra"], base.input_shape)
    assert cost.analyze(g2).params > cost.analyze(base).params


def test_empty_graph_zero_report():
    r = cost.analyze(G.NetGraph("empty", [], [], (4, 4, 3)))
    assert (r.params, r.flops, r.madds, r.size_bytes) == (0, 0, 0, 0)


def test_bn_and_cheap_op_flags():
    g = G.build_grnet(width=0.25)
    no_bn = cost.analyze(g, count_bn=False)
    with_bn = cost.analyze(g)
    n_bn_floats = sum(4 * s[0] for n, s in G.param_shapes(g).items() if n.endswith(".gamma"))
    assert with_bn.params - no_bn.params == n_bn_floats
    assert cost.analyze(g, count_cheap_ops=True).flops > with_bn.flops


def test_compare_to_reference():
    r = cost.analyze(G.build_gynet("gynet-baseline"))
    rows, ok = cost.compare_to_reference(r, cost.PAPER_REFERENCE["gynet-baseline"])
    assert ok and {row.metric for row in rows} == {"params", "size_mb"}
    rows, ok = cost.compare_to_reference(r, {"params": (r.params / 2, "rel", 0.02)})
    assert not ok and abs(rows[0].rel_error - 1.0) < 1e-12


def test_grnet_derived_count_is_documented_value():
    r = cost.analyze(G.build_grnet())
    assert r.params == 57_284
    _, ok = cost.compare_to_reference(r, cost.PAPER_REFERENCE["grnet"])
    assert not ok


def test_table_and_summary_format():
    r = cost.analyze(G.build_grnet(width=0.25))
    table = cost.format_table(r)
    assert table.splitlines()[0].split("\t") == ["id", "kind", "out_shape", "params", "flops", "madds"]
    assert table.splitlines()[-1].startswith("TOTAL")
    assert "Params" in cost.format_summary(r)
    d = r.to_dict()
    assert d["size_mb"] == r.size_mb and d["input_shape"] == [224, 224, 3]
