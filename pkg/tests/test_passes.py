import numpy as np
import pytest

from conftest import random_small_graph
from mcumap.fixtures import GraphBuilder
from mcumap.interp import canonical, interpret_graph, interpret_values
from mcumap.ir import (
    I8, I32, NCHW, NHWC, Graph, Node, TensorSpec, clone_graph, validate_graph,
    value_specs,
)
from mcumap.passes import (
    apply_module_padding, apply_module_transforms, apply_module_weight_layout,
    fold_constants_and_dce, rewrite_requant, transform_layout,
)
from mcumap.target import load_target


def outputs_match(g1: Graph, g2: Graph, seed=0, trials=3) -> bool:
    rng = np.random.default_rng(seed)
    specs1, specs2 = value_specs(g1), value_specs(g2)
    for _ in range(trials):
        feed = {}
        for t in g1.inputs:
            arr = rng.integers(-128, 128, t.shape)
            feed[t.name] = arr
        feed2 = {}
        for t1, t2 in zip(g1.inputs, g2.inputs):
            arr = feed[t1.name]
            if t1.rank == 4 and t1.layout != t2.layout:
                from mcumap.layouts import transpose_activation
                arr = transpose_activation(arr.reshape(t1.shape), t1.layout, t2.layout)
            feed2[t2.name] = arr
        o1 = interpret_graph(g1, feed)
        o2 = interpret_graph(g2, feed2)
        for ref in g1.outputs:
            a = canonical(o1[ref], specs1[ref])
            b = canonical(o2[ref], specs2[ref])
            if not np.array_equal(a, b):
                return False
    return True


def test_fold_adds_constants():
    g = Graph("f", [TensorSpec("x", (4,), I32)],
              {"a": (TensorSpec("a", (4,), I32), np.full(4, 3)),
               "b": (TensorSpec("b", (4,), I32), np.full(4, 4))},
              [Node("s", "add", {}, ("a", "b")),
               Node("o", "add", {}, ("x", "s"))],
              ["o"])
    out = fold_constants_and_dce(g)
    assert len(out.nodes) == 1
    assert np.array_equal(out.constants["s"][1], np.full(4, 7))


def test_dce_removes_exactly_unreachable():
    g = random_small_graph(3)
    before = len(g.nodes)
    folded = fold_constants_and_dce(g)
    # the generator plants one dead node plus a foldable constant expression
    assert len(folded.nodes) < before
    assert validate_graph(folded) == []
    assert outputs_match(g, folded)


@pytest.mark.parametrize("seed", range(12))
def test_fold_preserves_semantics_and_is_idempotent(seed):
    g = random_small_graph(seed)
    folded = fold_constants_and_dce(g)
    assert validate_graph(folded) == []
    assert outputs_match(g, folded, seed=seed)
    twice = fold_constants_and_dce(folded)
    from mcumap.ir import serialize_graph
    assert serialize_graph(twice) == serialize_graph(folded)


def requant_chain_graph(m, b, d, shape=(1, 2, 4, 4), producer="relu"):
    g = GraphBuilder("rc", 9)
    x = g.input("x", shape, NCHW)
    t = x
    if producer == "relu":
        t = g.node("pre", "relu", {}, [t])
    ch = shape[1]
    mc = g.const("mc", np.full(ch, m) if np.ndim(m) == 0 else np.asarray(m), I32)
    bc = g.const("bc", np.full(ch, b), I32)
    dc = g.const("dc", np.full(ch, d), I32)
    t = g.node("mul", "mul", {}, [t, mc])
    t = g.node("addb", "add", {}, [t, bc])
    t = g.node("divd", "div", {}, [t, dc])
    t = g.node("clipc", "clip", {"min": -128, "max": 127}, [t])
    t = g.node("castc", "cast", {"dtype": I8}, [t])
    g.output(t)
    return g.finish()


def test_rewrite_fires_on_power_of_two_after_relu():
    g = requant_chain_graph(3, 40, 256)
    out = rewrite_requant(g, strict=True)
    ops = [n.op for n in out.nodes]
    assert "requant" in ops and "div" not in ops
    rq = next(n for n in out.nodes if n.op == "requant")
    assert rq.attrs["S"] == 8
    assert rq.id == "castc"  # downstream references stay valid
    assert outputs_match(g, out)


def test_rewrite_skips_non_power_of_two():
    g = requant_chain_graph(3, 40, 100)
    out = rewrite_requant(g, strict=True)
    assert [n.op for n in out.nodes] == [n.op for n in g.nodes]


def test_strict_mode_blocks_possibly_negative_operand():
    # x = -15, M = 1, B = 0, D = 8: div gives -1 but a shift would give -2
    g = requant_chain_graph(1, 0, 8, producer="none")
    out = rewrite_requant(g, strict=True)
    assert all(n.op != "requant" for n in out.nodes)
    # non-strict mode rewrites anyway
    loose = rewrite_requant(g, strict=False)
    assert any(n.op == "requant" for n in loose.nodes)
    assert not outputs_match(g, loose, trials=8)  # the caveat is real


def test_strict_rewrite_exhaustively_equivalent():
    # whenever the strict rewrite fires, div and shift agree on every i8 input
    rng = np.random.default_rng(7)
    fired = 0
    for _ in range(40):
        m = int(rng.integers(0, 2**10))
        b = int(rng.integers(0, 2**12))
        s = int(rng.integers(0, 10))
        g = requant_chain_graph(m, b, 1 << s, shape=(1, 1, 16, 16))
        out = rewrite_requant(g, strict=True)
        if not any(n.op == "requant" for n in out.nodes):
            continue
        fired += 1
        xs = np.arange(-128, 128).reshape(1, 1, 16, 16)
        a = interpret_graph(g, {"x": xs})["castc"]
        c = interpret_graph(out, {"x": xs})["castc"]
        assert np.array_equal(a, c)
    assert fired > 0


def test_layout_roundtrip_bit_identical(resnet8):
    nhwc = transform_layout(resnet8, NHWC)
    assert validate_graph(nhwc) == []
    assert outputs_match(resnet8, nhwc)
    back = transform_layout(nhwc, NCHW)
    for name, (spec, data) in resnet8.constants.items():
        assert np.array_equal(back.constants[name][1], data)
    again = transform_layout(nhwc, NHWC)
    from mcumap.ir import serialize_graph
    assert serialize_graph(again) == serialize_graph(nhwc)


def test_weight_payload_permuted():
    g = GraphBuilder("w", 3)
    g.input("x", (1, 8, 6, 6), NCHW)
    t = g.conv("x", 16, 3, 3, (1, 1), (1, 1, 1, 1))
    g.output(t)
    src = g.finish()
    wname = src.nodes[0].inputs[1]
    nhwc = transform_layout(src, NHWC)
    spec, data = nhwc.constants[wname]
    assert spec.shape == (16, 3, 3, 8) and spec.layout == "OHWI"
    orig = src.constants[wname][1].reshape(16, 8, 3, 3)
    assert np.array_equal(data.reshape(16, 3, 3, 8), np.transpose(orig, (0, 2, 3, 1)))


def test_diana_pads_k24_to_32_and_slices_back():
    b = GraphBuilder("p", 5)
    b.input("x", (1, 8, 8, 16), NCHW)
    t = b.requant(b.conv("x", 24, 1, 1))
    b.output(t)
    g = b.finish()
    target = load_target("diana")
    out = apply_module_padding(g, target.modules[0])
    assert validate_graph(out) == []
    specs = value_specs(out)
    conv = next(n for n in out.nodes if n.op == "conv2d")
    assert specs[conv.id].shape[1] == 32  # padded channels
    assert any(n.op == "slice" for n in out.nodes)
    assert specs[out.outputs[0]].shape[1] == 24  # sliced back
    assert outputs_match(g, out)


def test_padding_noop_on_aligned_k():
    b = GraphBuilder("p", 6)
    b.input("x", (1, 8, 8, 16), NCHW)
    t = b.requant(b.conv("x", 32, 1, 1))
    b.output(t)
    g = b.finish()
    out = apply_module_padding(g, load_target("diana").modules[0])
    assert [n.op for n in out.nodes] == [n.op for n in g.nodes]


def test_ne16_weight_blocking_bijective():
    b = GraphBuilder("n", 8)
    b.input("x", (1, 6, 6, 8), NHWC)
    w = b.rng.integers(-64, 64, (16, 8, 3, 3))
    wn = b.const("w0", w, I8, "OIHW")
    t = b.node("c0", "conv2d", {"strides": (1, 1), "padding": (1, 1, 1, 1),
                                "dilation": (1, 1), "groups": 1}, ["x", wn])
    b.output(t)
    g = transform_layout(b.finish(), NHWC)
    ne16 = load_target("gap9").module("ne16")
    out = apply_module_weight_layout(g, ne16)
    spec, data = out.constants["w0"]
    assert spec.layout == "ne16_weight"
    assert data.size == w.size  # pure permutation
    from mcumap.layouts import weight_to_oihw
    restored = weight_to_oihw(data.reshape(spec.shape), spec.layout, out.custom_layouts)
    assert np.array_equal(restored, w)
    assert outputs_match(g, out)


@pytest.mark.parametrize("seed", range(100))
def test_pass_pipeline_preserves_semantics(seed):
    """Acceptance-style property: every pass preserves interpreter outputs."""
    g = random_small_graph(seed)
    target = load_target("gap9" if seed % 2 else "diana")
    t = fold_constants_and_dce(g)
    t = rewrite_requant(t, strict=True)
    t = transform_layout(t, target.activation_layout)
    for module in target.modules:
        t = apply_module_transforms(t, module)
    assert validate_graph(t) == []
    assert outputs_match(g, t, seed=seed, trials=1)
