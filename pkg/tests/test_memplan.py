import numpy as np

from mcumap.compiler import CompileOptions, run_frontend
from mcumap.dispatch import DispatchDecision, dispatch, partition_graph
from mcumap.dse import SearchLimits
from mcumap.fixtures import GraphBuilder, build_resnet8
from mcumap.ir import I8, NCHW, Graph, Node, TensorSpec, value_specs
from mcumap.memplan import plan_static_memory
from mcumap.target import load_target


def fallback_pg(g: Graph):
    return partition_graph(g, [DispatchDecision((n.id,)) for n in g.nodes])


def test_linear_chain_reuses_first_slot():
    # A(100) -> B(50) -> C(100): B overlaps both, C reuses A's slot
    g = Graph("chain", [TensorSpec("x", (1, 100), I8)], {}, [
        Node("a", "relu", {}, ("x",)),
        Node("b", "slice", {"begin": (0, 0), "end": (1, 50)}, ("a",)),
        Node("c", "pad", {"pads": ((0, 0), (25, 25))}, ("b",)),
    ], ["c"])
    plan = plan_static_memory(fallback_pg(g))
    assert plan.sizes == {"a": 100, "b": 50, "c": 100}
    assert plan.arena_bytes == 150
    assert plan.offsets["a"] == 0 and plan.offsets["c"] == 0
    assert plan.offsets["b"] == 100


def test_single_tensor_arena_is_its_size():
    g = Graph("one", [TensorSpec("x", (1, 64), I8)], {},
              [Node("a", "relu", {}, ("x",))], ["a"])
    plan = plan_static_memory(fallback_pg(g))
    assert plan.arena_bytes == 64


def test_skip_connection_extends_lifetime():
    b = GraphBuilder("skip", 3)
    b.input("x", (1, 4, 8, 8), NCHW)
    t1 = b.requant(b.conv("x", 4, 3, 3, (1, 1), (1, 1, 1, 1)))
    t2 = b.requant(b.conv(t1, 4, 3, 3, (1, 1), (1, 1, 1, 1)))
    t3 = b.requant(b.add(t2, t1))  # t1 lives across t2's decision
    b.output(t3)
    g = b.finish()
    plan = plan_static_memory(fallback_pg(g))
    specs = value_specs(g)
    # during the add, both addends are live together
    assert plan.arena_bytes >= specs[t1].nbytes + specs[t2].nbytes
    for a in plan.offsets:
        for b2 in plan.offsets:
            if a >= b2:
                continue
            la, lb = plan.lifetimes[a], plan.lifetimes[b2]
            if la[1] < lb[0] or lb[1] < la[0]:
                continue
            assert (plan.offsets[a] + plan.sizes[a] <= plan.offsets[b2]
                    or plan.offsets[b2] + plan.sizes[b2] <= plan.offsets[a])


def test_plan_soundness_on_resnet():
    g = build_resnet8()
    target = load_target("gap9")
    opts = CompileOptions(population=8, generations=5, max_orderings=800)
    g = run_frontend(g, target, opts)
    pg = dispatch(g, target, mode="genetic",
                  limits=SearchLimits(population=8, generations=5, max_orderings=800))
    plan = plan_static_memory(pg)
    live = list(plan.offsets)
    for i, a in enumerate(live):
        for b in live[i + 1:]:
            la, lb = plan.lifetimes[a], plan.lifetimes[b]
            if la[1] < lb[0] or lb[1] < la[0]:
                continue
            ra = (plan.offsets[a], plan.offsets[a] + plan.sizes[a])
            rb = (plan.offsets[b], plan.offsets[b] + plan.sizes[b])
            assert ra[1] <= rb[0] or rb[1] <= ra[0], (a, b, ra, rb)
    # i32 intermediates stay element-aligned
    specs = value_specs(pg.graph)
    for name, off in plan.offsets.items():
        if specs[name].dtype == "i32":
            assert off % 4 == 0
