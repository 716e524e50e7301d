"""Command-line front-end: compile a graph for a target, estimate-only cost
sweeps over L1 sizes, oracle execution for differential testing, and fixture
export."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .compiler import CompileOptions, compile_graph, limits_from, run_frontend
from .dispatch import dispatch
from .fixtures import FIXTURES
from .interp import canonical, interpret_graph
from .ir import CompileError, parse_graph, serialize_graph, validate_graph, value_specs
from .layouts import transpose_activation
from .target import TargetModel, load_target


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def _size(v: str) -> int:
    v = v.strip().lower()
    if v.endswith("k"):
        return int(float(v[:-1]) * 1024)
    if v.endswith("m"):
        return int(float(v[:-1]) * 1024 * 1024)
    return int(v)


def _load_graph(path: str):
    p = Path(path)
    if not p.exists():
        raise CompileError(f"graph file not found: {path}")
    return parse_graph(p.read_text())


def _search_args(sub):
    sub.add_argument("--search", choices=("exhaustive", "genetic"), default="exhaustive")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--max-orderings", type=int, default=200_000)
    sub.add_argument("--strict-requant", type=_bool, default=True)


def _options(args) -> CompileOptions:
    return CompileOptions(
        search=args.search, seed=args.seed, max_orderings=args.max_orderings,
        strict_requant=args.strict_requant,
        emit_test_backend=getattr(args, "emit_test_backend", False),
    )


def target_with_l1(target: TargetModel, l1_bytes: int) -> TargetModel:
    """Every non-top memory level resized to l1_bytes (ablation knob)."""
    modules = []
    for m in target.modules:
        levels = [dataclasses.replace(lvl, size=l1_bytes) for lvl in m.memory_levels[:-1]]
        levels.append(m.memory_levels[-1])
        modules.append(dataclasses.replace(m, memory_levels=levels))
    return dataclasses.replace(target, modules=modules, name=target.name)


def cmd_compile(args) -> int:
    try:
        g = _load_graph(args.graph)
        target = load_target(args.target)
        program, pg = compile_graph(g, target, _options(args))
    except CompileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(program.files.items()):
        (out / name).write_text(text)
    report_path = Path(args.report) if args.report else out / "report.json"
    report_path.write_text(json.dumps(program.report, indent=2) + "\n")

    print(f"{g.name} on {target.name}: {len(pg.decisions)} layers, "
          f"{program.report['network']['total_cycles']} predicted cycles, "
          f"arena {program.report['memory']['arena_bytes']} B")
    for entry in program.report["layers"]:
        cyc = entry["predicted_cycles"]
        print(f"  {entry['name']:<40} {entry['module']:<10} {cyc:>12}")
    if program.report["memory"]["out_of_memory"]:
        print("warning: arena exceeds the target's main memory", file=sys.stderr)
    if not any(d.assigned for d in pg.decisions):
        print("warning: nothing accelerated; host fallback only", file=sys.stderr)
        return 2
    return 0


def _estimate_rows(g, target: TargetModel, opts: CompileOptions, l1_sizes: list[int]):
    """Per-layer MACs/cycle for each L1 size; rows keyed by the grouping at
    the largest size.

    Sizes are swept ascending and each layer's winning orderings are carried
    into the larger-L1 searches (feasibility is upward-monotone), so a lucky
    small-memory schedule can never beat the schedule reported for more
    memory."""
    from .dse import allocate_levels, evaluate_schedule, search_best

    carry: dict = {}

    def carrying_dse(w, module, mode, limits):
        key = (module.name, w.kind, w.dims, w.spatial, w.strides, w.dilation,
               w.groups, w.tail)
        best = search_best(w, module, mode=mode, limits=limits)
        for ordering in carry.get(key, ()):
            s = allocate_levels(ordering, w, module)
            if s is None:
                continue
            br = evaluate_schedule(s, w, module)
            if best is None or br.total < best[1].total:
                best = (s, br)
        if best is not None:
            prev = carry.setdefault(key, [])
            if best[0].temporal not in prev:
                prev.insert(0, best[0].temporal)
                del prev[3:]
        return best

    biggest = target_with_l1(target, max(l1_sizes)) if l1_sizes else target
    base_front = run_frontend(g, biggest, opts)
    base_pg = dispatch(base_front, biggest, mode=opts.search, limits=limits_from(opts))
    rows = [{"nodes": list(d.node_ids), "per_size": []} for d in base_pg.decisions]
    cells: dict[tuple, dict] = {}
    for l1 in sorted(l1_sizes):
        t = target_with_l1(target, l1)
        pg = dispatch(base_front, t, dse=carrying_dse, mode=opts.search,
                      limits=limits_from(opts))
        by_nodes = {tuple(d.node_ids): d for d in pg.decisions}
        for row in rows:
            d = by_nodes.get(tuple(row["nodes"]))
            if d is not None and d.assigned:
                cells[(l1, tuple(row["nodes"]))] = {
                    "l1_bytes": l1, "module": d.module,
                    "predicted_cycles": d.cost.total,
                    "macs_per_cycle": round(d.cost.macs_per_cycle, 6),
                }
            else:
                cells[(l1, tuple(row["nodes"]))] = {"l1_bytes": l1, "module": "fallback"}
    for row in rows:
        row["per_size"] = [cells[(l1, tuple(row["nodes"]))] for l1 in l1_sizes]
    return rows


def cmd_estimate(args) -> int:
    try:
        g = _load_graph(args.graph)
        target = load_target(args.target)
        opts = _options(args)
        sizes = sorted((_size(s) for s in args.l1_sizes.split(",")), reverse=True) \
            if args.l1_sizes else [m.memory_levels[0].size for m in target.modules[:1]]
        rows = _estimate_rows(g, target, opts, sizes)
    except CompileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    report = {
        "schema_version": 1,
        "graph": g.name,
        "target": target.name,
        "l1_sizes": sizes,
        "layers": rows,
    }
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    header = "layer".ljust(36) + "".join(f"{s//1024}k".rjust(12) for s in sizes)
    print(header)
    for row in rows:
        cells = []
        for cell in row["per_size"]:
            cells.append("fallback" if cell["module"] == "fallback"
                         else f"{cell['macs_per_cycle']:.3f}")
        print(",".join(row["nodes"])[:35].ljust(36) + "".join(c.rjust(12) for c in cells))
    return 0


def cmd_run_oracle(args) -> int:
    try:
        g = _load_graph(args.graph)
        diags = validate_graph(g)
        if diags:
            raise CompileError("graph validation failed:\n  " + "\n  ".join(diags))
        inputs_doc = json.loads(Path(args.input).read_text())
        specs = value_specs(g)
        feed = {}
        for t in g.inputs:
            if t.name not in inputs_doc:
                raise CompileError(f"missing input {t.name!r}")
            arr = np.asarray(inputs_doc[t.name], dtype=np.int64)
            if arr.size != t.size:
                raise CompileError(
                    f"input {t.name!r} has {arr.size} values, expected {t.size}")
            if t.rank == 4:
                ax = {c: i for i, c in enumerate(t.layout)}
                canon_shape = tuple(t.shape[ax[a]] for a in "NCHW")
                arr = transpose_activation(arr.reshape(canon_shape), "NCHW", t.layout)
            feed[t.name] = arr.reshape(t.shape)
        outs = interpret_graph(g, feed)
    except (CompileError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    doc = {ref: [int(v) for v in canonical(arr, specs[ref]).reshape(-1)]
           for ref, arr in outs.items()}
    print(json.dumps(doc))
    return 0


def cmd_fixture(args) -> int:
    if args.name not in FIXTURES:
        print(f"error: unknown fixture {args.name!r}; have {sorted(FIXTURES)}",
              file=sys.stderr)
        return 1
    text = serialize_graph(FIXTURES[args.name]())
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mcumap",
        description="Compile integer CNN graphs to C for heterogeneous MCU targets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="full compilation to C sources + report")
    p.add_argument("--graph", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--emit-test-backend", type=_bool, default=False)
    _search_args(p)
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("estimate", help="predicted cycles only, over L1 sizes")
    p.add_argument("--graph", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--l1-sizes", help="comma list, e.g. 128k,64k,32k")
    p.add_argument("--report")
    _search_args(p)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("run-oracle", help="reference interpreter over JSON inputs")
    p.add_argument("--graph", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(fn=cmd_run_oracle)

    p = sub.add_parser("fixture", help="write a bundled network fixture as JSON")
    p.add_argument("name")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_fixture)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
