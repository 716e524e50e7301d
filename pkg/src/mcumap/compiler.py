"""End-to-end compilation pipeline: parse, validate, transform, match,
dispatch through the DSE, plan memory, and emit C plus the report."""

from __future__ import annotations

from dataclasses import dataclass

from .dispatch import PartitionedGraph, dispatch
from .dse import SearchLimits
from .ir import CompileError, Graph, validate_graph
from .memplan import plan_static_memory
from .network import EmittedProgram, emit_network
from .passes import (
    apply_module_padding, apply_module_weight_layout, fold_constants_and_dce,
    rewrite_requant, transform_layout,
)
from .target import TargetModel


@dataclass
class CompileOptions:
    search: str = "exhaustive"        # preferred mode; large spaces go genetic
    seed: int = 0
    max_orderings: int = 200_000
    strict_requant: bool = True
    emit_test_backend: bool = False
    population: int = 20
    generations: int = 20


def limits_from(opts: CompileOptions) -> SearchLimits:
    return SearchLimits(max_orderings=opts.max_orderings, seed=opts.seed,
                        population=opts.population, generations=opts.generations)


def run_frontend(g: Graph, target: TargetModel, opts: CompileOptions) -> Graph:
    """Hardware-agnostic passes, layout switch, and per-module padding."""
    diags = validate_graph(g)
    if diags:
        raise CompileError("graph validation failed:\n  " + "\n  ".join(diags))
    g = fold_constants_and_dce(g)
    g = rewrite_requant(g, strict=opts.strict_requant)
    g = fold_constants_and_dce(g)
    g = transform_layout(g, target.activation_layout)
    for module in target.modules:
        g = apply_module_padding(g, module)
    diags = validate_graph(g)
    if diags:
        raise AssertionError("transform pipeline broke the graph:\n  " + "\n  ".join(diags))
    return g


def partition(g: Graph, target: TargetModel, opts: CompileOptions) -> PartitionedGraph:
    pg = dispatch(g, target, mode=opts.search, limits=limits_from(opts))
    # custom weight storage only for the regions that actually landed on a
    # module wanting it; re-blocking earlier would corrupt the other bidders
    relayout = g
    for module in target.modules:
        if module.transforms.weight_layout is None:
            continue
        ids = [nid for d in pg.decisions if d.assigned and d.module == module.name
               for nid in d.node_ids]
        if ids:
            relayout = apply_module_weight_layout(relayout, module, node_ids=ids)
    if relayout is not g:
        pg.graph = relayout
    return pg


def compile_graph(g: Graph, target: TargetModel,
                  opts: CompileOptions | None = None) -> tuple[EmittedProgram, PartitionedGraph]:
    opts = opts or CompileOptions()
    g = run_frontend(g, target, opts)
    pg = partition(g, target, opts)
    plan = plan_static_memory(pg)
    program = emit_network(pg, plan, target, emit_backend=opts.emit_test_backend)
    return program, pg
