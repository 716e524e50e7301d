"""Whole-network assembly: per-decision layer sources, weight tables, the
static arena plan, a main() harness with text tensor I/O in canonical index
order, and the JSON report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codegen import CT, LayerEmitter, LayerStructure, c_ident, _fmt_array
from .cruntime import (
    API_HEADER_NAME, BINDINGS_HEADER_NAME, TILE_HEADER, TILE_HEADER_NAME,
    BACKEND_SOURCE_NAME, emit_api_header, emit_bindings_header, emit_test_backend,
)
from .dispatch import PartitionedGraph
from .dse import schedule_digest
from .fallback import FallbackEmitter
from .ir import DTYPE_SIZE, Graph, TensorSpec, value_specs
from .memplan import MemoryPlan, plan_static_memory
from .target import TargetModel

REPORT_SCHEMA_VERSION = 1


@dataclass
class EmittedProgram:
    files: dict[str, str]
    report: dict
    structures: list[LayerStructure] = field(default_factory=list)


def weight_symbol(ref: str) -> str:
    return f"w_{c_ident(ref)}"


def _emit_weights(g: Graph) -> tuple[str, str]:
    decls, defs = [], []
    defs.append('#include "match_api.h"')
    defs.append('#include "weights.h"')
    defs.append("")
    for name in sorted(g.constants):
        spec, data = g.constants[name]
        ct = CT[spec.dtype]
        sym = weight_symbol(name)
        decls.append(f"extern const {ct} {sym}[{max(spec.size, 1)}];")
        defs.append(f"const {ct} {sym}[{max(spec.size, 1)}] = {{")
        defs.append(f"    {_fmt_array(data)}")
        defs.append("};")
    header = "\n".join(["#ifndef MCUMAP_WEIGHTS_H", "#define MCUMAP_WEIGHTS_H", "",
                        "#include <stdint.h>", ""] + decls + ["", "#endif", ""])
    return header, "\n".join(defs) + "\n"


def _emit_memory_plan(plan: MemoryPlan) -> str:
    lines = ["#ifndef MCUMAP_MEMORY_PLAN_H", "#define MCUMAP_MEMORY_PLAN_H", "",
             f"#define MCUMAP_ARENA_BYTES {max(plan.arena_bytes, 1)}", ""]
    for name in sorted(plan.offsets):
        lines.append(f"#define MCUMAP_OFF_{c_ident(name)} {plan.offsets[name]}")
    lines += ["", "#endif", ""]
    return "\n".join(lines)


def _canonical_perm_loops(spec: TensorSpec, src_expr: str, dst_expr: str,
                          to_storage: bool) -> list[str]:
    """Loops converting between canonical (NCHW) file order and the stored
    layout. Identity for everything except NHWC 4-D tensors."""
    out = []
    if spec.rank == 4 and spec.layout == "NHWC":
        n, h, w, c = spec.shape
        out.append(f"    for (int nn = 0; nn < {n}; ++nn)")
        out.append(f"    for (int cc = 0; cc < {c}; ++cc)")
        out.append(f"    for (int yy = 0; yy < {h}; ++yy)")
        out.append(f"    for (int xx = 0; xx < {w}; ++xx)")
        canon = f"((nn * {c} + cc) * {h} + yy) * {w} + xx"
        stored = f"((nn * {h} + yy) * {w} + xx) * {c} + cc"
        if to_storage:
            out.append(f"        {dst_expr}[{stored}] = {src_expr}[{canon}];")
        else:
            out.append(f"        {dst_expr}[{canon}] = {src_expr}[{stored}];")
    else:
        out.append(f"    for (long i = 0; i < {spec.size}; ++i)")
        out.append(f"        {dst_expr}[i] = {src_expr}[i];")
    return out


def layer_name(index: int, decision) -> str:
    return f"layer_{index:02d}_{c_ident(decision.node_ids[-1])}"


def emit_network(pg: PartitionedGraph, plan: MemoryPlan, target: TargetModel,
                 emit_backend: bool = False) -> EmittedProgram:
    g = pg.graph
    specs = value_specs(g)

    def value_symbol(ref: str) -> str:
        return weight_symbol(ref)

    files: dict[str, str] = {}
    structures: list[LayerStructure] = []
    layer_protos: list[str] = []
    layer_calls: list[str] = []
    layer_entries: list[dict] = []

    def buffer_expr(ref: str, ctype: str) -> str:
        if ref in plan.offsets:
            return f"({ctype} *)(arena + MCUMAP_OFF_{c_ident(ref)})"
        if ref in g.constants:
            return f"({ctype} *){weight_symbol(ref)}"
        return f"in_{c_ident(ref)}"

    for i, d in enumerate(pg.decisions):
        name = layer_name(i, d)
        out_spec = specs[d.node_ids[-1]]
        out_t = CT[out_spec.dtype]
        if d.assigned:
            module = target.module(d.module)
            emitter = LayerEmitter(name, d, g, module, specs, value_symbol)
            src, structure = emitter.render()
            structures.append(structure)
            ext_refs = [ref for _, ref in emitter._external_inputs()]
        else:
            node = g.node_map()[d.node_ids[0]]
            emitter = FallbackEmitter(name, node, g, specs, value_symbol)
            src = emitter.render()
            ext_refs = [r for r in node.inputs if r not in g.constants]
        files[f"{name}.c"] = src
        proto_args = [f"const {CT[specs[r].dtype]} *" for r in ext_refs] + [f"{out_t} *"]
        layer_protos.append(f"void {name}({', '.join(proto_args)});")
        call_args = [buffer_expr(r, CT[specs[r].dtype]) for r in ext_refs]
        call_args.append(buffer_expr(d.node_ids[-1], out_t))
        layer_calls.append(f"    {name}({', '.join(call_args)});")

        entry = {
            "name": name,
            "nodes": list(d.node_ids),
            "module": d.module if d.assigned else "fallback",
        }
        if d.assigned:
            entry.update({
                "pattern": d.pattern,
                "predicted_cycles": d.cost.total,
                "macs": d.cost.macs,
                "macs_per_cycle": round(d.cost.macs_per_cycle, 6),
                "schedule": schedule_digest(d.schedule),
                "transfers": {o: d.cost.transfers(o) for o in ("I", "W", "O")},
                "cost": d.cost.to_doc(),
            })
        else:
            entry.update({"predicted_cycles": 0, "macs": 0, "unmodeled": True})
        layer_entries.append(entry)

    weights_h, weights_c = _emit_weights(g)
    files["weights.h"] = weights_h
    files["weights.c"] = weights_c
    files["memory_plan.h"] = _emit_memory_plan(plan)
    files[API_HEADER_NAME] = emit_api_header(target)
    files[BINDINGS_HEADER_NAME] = emit_bindings_header(target)
    files[TILE_HEADER_NAME] = TILE_HEADER

    # main.c: run() over the arena plus a text-file harness entry point
    m: list[str] = [
        "#include <stdio.h>",
        "#include <stdlib.h>",
        "#include <string.h>",
        f'#include "{API_HEADER_NAME}"',
        '#include "memory_plan.h"',
        '#include "weights.h"',
        "",
        "static unsigned char arena[MCUMAP_ARENA_BYTES] __attribute__((aligned(8)));",
        "",
    ]
    m.extend(layer_protos)
    m.append("")
    run_params = [f"const {CT[t.dtype]} *in_{c_ident(t.name)}" for t in g.inputs]
    run_params += [f"{CT[specs[r].dtype]} *net_out{j}" for j, r in enumerate(g.outputs)]
    m.append(f"void mcumap_run({', '.join(run_params)})")
    m.append("{")
    m.extend(layer_calls)
    for j, ref in enumerate(g.outputs):
        ct = CT[specs[ref].dtype]
        m.append(f"    memcpy(net_out{j}, {buffer_expr(ref, ct)}, "
                 f"{specs[ref].size * DTYPE_SIZE[specs[ref].dtype]});")
    m.append("}")
    m.append("")
    m.append("static int read_values(const char *path, long *dst, long n)")
    m.append("{")
    m.append('    FILE *f = fopen(path, "r");')
    m.append("    if (!f) return -1;")
    m.append("    for (long i = 0; i < n; ++i)")
    m.append('        if (fscanf(f, "%ld", &dst[i]) != 1) { fclose(f); return -1; }')
    m.append("    fclose(f);")
    m.append("    return 0;")
    m.append("}")
    m.append("")
    m.append("int main(int argc, char **argv)")
    m.append("{")
    n_in, n_out = len(g.inputs), len(g.outputs)
    m.append(f"    if (argc != 1 + {n_in} + {n_out}) {{")
    m.append(f'        fprintf(stderr, "usage: %s {" ".join("<in>" for _ in g.inputs)} '
             f'{" ".join("<out>" for _ in g.outputs)}\\n", argv[0]);')
    m.append("        return 2;")
    m.append("    }")
    for j, t in enumerate(g.inputs):
        ident = c_ident(t.name)
        m.append(f"    static long raw_{ident}[{t.size}];")
        m.append(f"    static {CT[t.dtype]} buf_{ident}[{t.size}];")
        m.append(f"    if (read_values(argv[{1 + j}], raw_{ident}, {t.size})) return 2;")
        m.extend(_canonical_perm_loops(t, f"raw_{ident}", f"buf_{ident}", to_storage=True))
    for j, ref in enumerate(g.outputs):
        spec = specs[ref]
        m.append(f"    static {CT[spec.dtype]} out_{j}[{spec.size}];")
    m.append("    match_platform_init();")
    args = [f"buf_{c_ident(t.name)}" for t in g.inputs] + [f"out_{j}" for j in range(n_out)]
    m.append(f"    mcumap_run({', '.join(args)});")
    m.append("    match_platform_close();")
    for j, ref in enumerate(g.outputs):
        spec = specs[ref]
        m.append(f"    {{")
        m.append(f"        static long canon_{j}[{spec.size}];")
        m.extend("    " + line for line in
                 _canonical_perm_loops(spec, f"out_{j}", f"canon_{j}", to_storage=False))
        m.append(f'        FILE *f = fopen(argv[{1 + n_in + j}], "w");')
        m.append("        if (!f) return 2;")
        m.append(f"        for (long i = 0; i < {spec.size}; ++i)")
        m.append(f'            fprintf(f, "%ld\\n", (long)canon_{j}[i]);')
        m.append("        fclose(f);")
        m.append("    }")
    m.append("    return 0;")
    m.append("}")
    files["main.c"] = "\n".join(m) + "\n"

    if emit_backend:
        files[BACKEND_SOURCE_NAME] = emit_test_backend(target)

    total = sum(e["predicted_cycles"] for e in layer_entries)
    total_macs = sum(e["macs"] for e in layer_entries)
    l2 = max((lvl.size for mod in target.modules for lvl in mod.memory_levels),
             default=0)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "graph": g.name,
        "target": target.name,
        "layers": layer_entries,
        "network": {
            "total_cycles": total,
            "total_macs": total_macs,
            "macs_per_cycle": round(total_macs / total, 6) if total else 0.0,
        },
        "memory": {
            "arena_bytes": plan.arena_bytes,
            "l2_bytes": l2,
            "out_of_memory": plan.arena_bytes > l2,
        },
    }
    return EmittedProgram(files, report, structures)
