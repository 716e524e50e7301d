import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from mcumap.cli import target_with_l1
from mcumap.codegen import simulate_copy_counts
from mcumap.compiler import CompileOptions, compile_graph
from mcumap.fixtures import GraphBuilder, build_resnet8
from mcumap.interp import canonical, interpret_graph
from mcumap.ir import NCHW, value_specs
from mcumap.target import load_target

OPTS = CompileOptions(emit_test_backend=True, population=10, generations=8,
                      max_orderings=1200)


def small_conv_graph(seed=1, c=8, k=16, h=12):
    b = GraphBuilder("cg", seed)
    b.input("x", (1, c, h, h), NCHW)
    t = b.requant(b.conv("x", k, 3, 3, (1, 1), (1, 1, 1, 1)))
    b.output(t)
    return b.finish()


def compile_to(tmp, g, target):
    program, pg = compile_graph(g, target, OPTS)
    tmp = Path(tmp)
    for name, text in program.files.items():
        (tmp / name).write_text(text)
    return program, pg


def build_and_run(tmp, g, extra_env=None):
    tmp = Path(tmp)
    srcs = sorted(f.name for f in tmp.glob("*.c"))
    r = subprocess.run(["gcc", "-O1", "-o", "net"] + srcs, cwd=tmp,
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    rng = np.random.default_rng(99)
    argv = []
    feeds = {}
    for i, t in enumerate(g.inputs):
        x = rng.integers(-128, 128, t.shape)
        feeds[t.name] = x
        (tmp / f"in{i}.txt").write_text("\n".join(str(v) for v in x.reshape(-1)))
        argv.append(f"in{i}.txt")
    rr = subprocess.run(["./net"] + argv + ["out0.txt"], cwd=tmp,
                        capture_output=True, text=True)
    assert rr.returncode == 0, rr.stderr
    got = np.loadtxt(tmp / "out0.txt", dtype=np.int64).reshape(-1)
    specs = value_specs(g)
    exp = canonical(interpret_graph(g, feeds)[g.outputs[0]], specs[g.outputs[0]]).reshape(-1)
    counters = json.loads((tmp / "match_counters.json").read_text())
    return exp, got, counters


def test_structural_invariants_small_l1():
    g = small_conv_graph()
    target = target_with_l1(load_target("gap9"), 1024)
    program, pg = compile_graph(g, target, OPTS)
    assigned = [d for d in pg.decisions if d.assigned]
    assert assigned
    for structure, d in zip(program.structures, assigned):
        n = len(structure.loops)
        assert structure.kernel_depth == n
        by_op = {s.operand: s for s in structure.sites}
        for o in "IWO":
            assert by_op[o].depth == n - by_op[o].cut


def test_symbolic_counts_equal_breakdown():
    g = small_conv_graph()
    for l1 in (None, 4096, 1024):
        target = load_target("gap9") if l1 is None else target_with_l1(load_target("gap9"), l1)
        program, pg = compile_graph(g, target, OPTS)
        assigned = [d for d in pg.decisions if d.assigned]
        for structure, d in zip(program.structures, assigned):
            counted = simulate_copy_counts(structure)
            for o in "IWO":
                assert counted[o] == d.cost.transfers(o), (l1, o)


def test_emission_deterministic():
    g = small_conv_graph()
    target = load_target("gap9")
    p1, _ = compile_graph(g, target, OPTS)
    p2, _ = compile_graph(build_resnet8(), target, OPTS)  # unrelated interleaved work
    p3, _ = compile_graph(g, target, OPTS)
    assert p1.files.keys() == p3.files.keys()
    for name in p1.files:
        assert p1.files[name] == p3.files[name], name


def test_every_source_includes_api_header():
    g = small_conv_graph()
    program, _ = compile_graph(g, load_target("gap9"), OPTS)
    for name, text in program.files.items():
        if name.endswith(".c"):
            assert '#include "match_api.h"' in text, name


def test_tiled_roundtrip_with_double_buffering(tmp_path):
    # pointwise single-channel conv: no reduction factors, so the allocator's
    # double-buffered pass succeeds for every ordering
    b = GraphBuilder("db", 5)
    b.input("x", (1, 1, 32, 32), NCHW)
    t = b.requant(b.conv("x", 16, 1, 1))
    b.output(t)
    g = b.finish()
    target = target_with_l1(load_target("gap9"), 1024)
    program, pg = compile_to(tmp_path, g, target)
    d = next(d for d in pg.decisions if d.assigned)
    assert any(b == "double" for b in d.schedule.buffering.values())
    assert any(d.cost.transfers(o) > 1 for o in "IWO")
    exp, got, counters = build_and_run(tmp_path, g)
    assert np.array_equal(exp, got)
    entry = next(e for e in program.report["layers"] if e["module"] != "fallback")
    assert counters[entry["name"]] == entry["transfers"]


def test_fallback_ops_roundtrip(tmp_path):
    """A graph no module matches exercises the naive host emitters."""
    b = GraphBuilder("fb", 4)
    b.input("x", (1, 4, 8, 8), NCHW)
    t = b.node("mp", "maxpool2d", {"kernel": (2, 2), "strides": (2, 2),
                                   "padding": (0, 0, 0, 0)}, ["x"])
    t = b.node("ap", "avgpool2d", {"kernel": (2, 2), "strides": (2, 2),
                                   "padding": (1, 1, 0, 0)}, [t])
    mc = b.const("mc", np.full(4, 3), "i32")
    t = b.node("mul", "mul", {}, [t, mc])
    dc = b.const("dc", np.full(4, -2), "i32")
    t = b.node("divd", "div", {}, [t, dc])
    t = b.node("sh", "right_shift", {"amount": 1}, [t])
    t = b.node("cl", "clip", {"min": -100, "max": 100}, [t])
    t = b.node("ct", "cast", {"dtype": "i8"}, [t])
    t = b.node("pd", "pad", {"pads": ((0, 0), (0, 0), (1, 0), (0, 1))}, [t])
    t = b.node("sl", "slice", {"begin": (0, 0, 1, 1), "end": (1, 4, 2, 2)}, [t])
    t = b.node("fl", "flatten", {}, [t])
    b.output(t)
    g = b.finish()
    program, pg = compile_to(tmp_path, g, load_target("gap9"))
    assert all(not d.assigned for d in pg.decisions)
    exp, got, _ = build_and_run(tmp_path, g)
    assert np.array_equal(exp, got)


def test_zero_layer_network_emits_empty_counters(tmp_path):
    b = GraphBuilder("nil", 2)
    b.input("x", (1, 8), None)
    t = b.node("r", "relu", {}, ["x"])
    b.output(t)
    program, pg = compile_to(tmp_path, b.finish(), load_target("gap9"))
    exp, got, counters = build_and_run(tmp_path, b.finish())
    assert np.array_equal(exp, got)
    assert counters == {}
