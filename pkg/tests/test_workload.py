import numpy as np

from conftest import make_workload
from mcumap.fixtures import GraphBuilder
from mcumap.ir import NCHW, value_specs
from mcumap.passes import transform_layout
from mcumap.target import load_target
from mcumap.workload import extract_workload, scratch_bytes


def _conv_graph(c, k, h, w, fy, fx, stride=(1, 1), pad=(1, 1, 1, 1), groups=1):
    b = GraphBuilder("wl", 1)
    b.input("x", (1, c, h, w), NCHW)
    t = b.requant(b.conv("x", k, fy, fx, stride, pad, groups=groups))
    b.output(t)
    return b.finish()


def test_conv_dims_read_from_anchor():
    g = transform_layout(_conv_graph(64, 64, 32, 32, 3, 3), "NHWC")
    cl = load_target("gap9").module("cluster")
    anchor = next(n for n in g.nodes if n.op == "conv2d")
    wl = extract_workload(anchor, ("conv2d", "requant"), g, cl, "conv2d_requant")
    assert wl.real_dims == (64, 64, 32, 32, 3, 3)
    assert wl.kind == "conv"
    assert wl.macs == 64 * 64 * 32 * 32 * 9


def test_dense_embedding_rule():
    b = GraphBuilder("d", 2)
    b.input("x", (1, 640))
    t = b.dense("x", 128)
    b.output(t)
    g = b.finish()
    cl = load_target("gap9").module("cluster")
    wl = extract_workload(g.nodes[0], ("dense",), g, cl, "dense")
    assert wl.real_dims == (128, 640, 1, 1, 1, 1)
    assert wl.kind == "dense"
    assert wl.macs == 128 * 640


def test_cluster_oy12_keeps_reduced_unroll_6():
    g = transform_layout(_conv_graph(8, 8, 12, 16, 3, 3), "NHWC")
    cl = load_target("gap9").module("cluster")
    anchor = next(n for n in g.nodes if n.op == "conv2d")
    wl = extract_workload(anchor, ("conv2d", "requant"), g, cl, "conv2d_requant")
    oy_i = 2
    assert wl.spatial[oy_i] == 6
    assert wl.dims[oy_i] // wl.spatial[oy_i] == 2


def test_pad_adaptation_records_padded_extent():
    g = transform_layout(_conv_graph(8, 8, 9, 16, 3, 3), "NHWC")
    cl = load_target("gap9").module("cluster")
    anchor = next(n for n in g.nodes if n.op == "conv2d")
    wl = extract_workload(anchor, ("conv2d",), g, cl, "conv2d")
    assert wl.spatial[2] == 8 and wl.dims[2] == 16 and wl.real_dims[2] == 9


def test_input_window_formula():
    cl = load_target("gap9").module("cluster")
    wl = make_workload("conv", (8, 8, 8, 8, 3, 3), cl, strides=(1, 1))
    iy, ix = wl.input_window((8, 8, 4, 4, 3, 3))
    assert iy == (4 - 1) * 1 + (3 - 1) + 1 == 6
    wl2 = make_workload("conv", (8, 8, 8, 8, 3, 3), cl, strides=(2, 2))
    iy2, _ = wl2.input_window((8, 8, 4, 4, 1, 1))
    assert iy2 == (4 - 1) * 2 + 1


def test_scratch_only_for_spatial_convs_on_cluster():
    gap9 = load_target("gap9")
    cl, ne = gap9.module("cluster"), gap9.module("ne16")
    conv = make_workload("conv", (64, 64, 8, 8, 3, 3), cl)
    assert scratch_bytes(conv, cl) == 2 * 8 * 3 * 3 * 64
    pw = make_workload("conv", (64, 64, 8, 8, 1, 1), cl)
    assert scratch_bytes(pw, cl) == 0
    assert scratch_bytes(conv, ne) == 0
    dense = make_workload("dense", (64, 640, 1, 1, 1, 1), cl)
    assert scratch_bytes(dense, cl) == 0


def test_depthwise_weight_bytes_per_group():
    cl = load_target("gap9").module("cluster")
    dw = make_workload("conv", (64, 64, 8, 8, 3, 3), cl, groups=64)
    assert dw.operand_bytes("W", dw.dims) == 64 * 1 * 3 * 3
    assert dw.reduction_channels(64) == 1
