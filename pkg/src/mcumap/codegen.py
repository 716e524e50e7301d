"""C code generation.

Assigned regions are emitted from a generic layer template: platform setup,
L1 allocation, the temporal loop nest outermost-first with tile copies at
each operand's cut boundary (double-buffered prefetch on asynchronous
modules), the pattern kernel in the innermost position, an inline
elementwise tail at output write-back, and teardown. Unmatched nodes get
naive host loops. Everything is deterministic text assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cruntime import (
    API_HEADER_NAME, BINDINGS_HEADER_NAME, TILE_HEADER, TILE_HEADER_NAME,
    emit_api_header, emit_bindings_header, emit_test_backend,
)
from .dispatch import DispatchDecision, PartitionedGraph
from .dse import Schedule
from .ir import DTYPE_SIZE, I8, Graph, Node, TensorSpec, _conv_attrs, channel_axis, value_specs
from .memplan import MemoryPlan, plan_static_memory
from .target import DIM_NAMES, ExecModule, TargetModel
from .workload import DIM_INDEX, Workload

K, C, OY, OX, FY, FX = range(6)

CT = {I8: "int8_t", "i32": "int32_t"}


def c_ident(name: str) -> str:
    out = "".join(ch if ch.isalnum() else "_" for ch in name)
    return out if out and not out[0].isdigit() else f"v_{out}"


def _fmt_array(data: np.ndarray, per_line: int = 20) -> str:
    vals = [str(int(v)) for v in data.reshape(-1)]
    lines = [", ".join(vals[i:i + per_line]) for i in range(0, len(vals), per_line)]
    return ",\n    ".join(lines)


# ---------------------------------------------------------------------------
# layer structure metadata (shared with the symbolic transfer oracle)
# ---------------------------------------------------------------------------

@dataclass
class CopySite:
    operand: str
    cut: int          # temporal index of the cut (innermost boundary)
    depth: int        # emitted loop depth of the copy call
    transfers: int    # expected runtime copy events


@dataclass
class LayerStructure:
    name: str
    loops: list[tuple[str, int]]      # outermost-first (dim name, trip count)
    sites: list[CopySite]
    kernel_depth: int


def simulate_copy_counts(structure: LayerStructure) -> dict[str, int]:
    """Walk the emitted loop nest and count copy-site executions per operand.

    Genuinely iterates the nest (no closed-form shortcut) so it can serve as
    an independent oracle for the DSE transfer counts."""
    counts = {s.operand: 0 for s in structure.sites}
    trips = [t for _, t in structure.loops]

    def rec(depth: int):
        for site in structure.sites:
            if site.depth == depth:
                counts[site.operand] += 1
        if depth < len(trips):
            for _ in range(trips[depth]):
                rec(depth + 1)

    rec(0)
    return counts


# ---------------------------------------------------------------------------
# geometry planning for one operand of an assigned layer
# ---------------------------------------------------------------------------

@dataclass
class OperandPlan:
    operand: str
    cut: int
    transfers: int
    storage_dims: tuple[str, ...]     # e.g. ("IY", "IX", "C") storage-major
    full: tuple[int, ...]             # real parent extents per storage dim
    unclamped: tuple[int, ...]        # schedule tile extents per storage dim
    tail: int                         # first dim of the contiguous parent run
    parent_strides: tuple[int, ...]
    max_box_elems: int
    elem: int
    buffering: str
    parent_expr: str = ""             # C expression for the parent pointer
    canonical_map: dict[str, int] = field(default_factory=dict)


def _suffix_products(ext) -> list[int]:
    out = [1] * len(ext)
    for i in range(len(ext) - 2, -1, -1):
        out[i] = out[i + 1] * ext[i + 1]
    return out


def _static_tail(unclamped, full, dynamic) -> int:
    """First dim of the contiguous run: dims after it must be provably fully
    covered on every iteration (static extent equal to the parent's)."""
    tail = len(full) - 1
    for i in range(len(full) - 1, 0, -1):
        if not dynamic[i] and unclamped[i] >= full[i]:
            tail = i - 1
        else:
            break
    return tail


class LayerEmitter:
    """Emits one assigned fused region as a C translation unit."""

    def __init__(self, name: str, decision: DispatchDecision, g: Graph,
                 module: ExecModule, specs: dict[str, TensorSpec],
                 value_symbol):
        self.name = name
        self.d = decision
        self.w: Workload = decision.workload
        self.s: Schedule = decision.schedule
        self.g = g
        self.module = module
        self.specs = specs
        self.value_symbol = value_symbol  # ref -> C expression for its buffer
        self.anchor = g.node_map()[decision.node_ids[0]]
        self.nodes = [g.node_map()[i] for i in decision.node_ids]
        self.out_spec = specs[decision.node_ids[-1]]
        self.n = len(self.s.temporal)
        self.lines: list[str] = []
        self.indent = 1
        if any(len(module.levels_for(o)) > 2 for o in self.w.operands):
            raise NotImplementedError("code generation supports two-level hierarchies")

    # -- helpers ----------------------------------------------------------

    def emit(self, text: str = ""):
        self.lines.append(("    " * self.indent + text) if text else "")

    def blocks(self) -> dict[int, tuple[int, int]]:
        """(dim, block extent) contributed by each temporal loop index."""
        running = list(self.s.spatial)
        out = {}
        for i, (d, p) in enumerate(self.s.temporal):
            out[i] = (d, running[d])
            running[d] *= p
        return out

    def origin_expr(self, dim: int, indices: dict[int, str]) -> str:
        """C expression of the dim origin given loop index variable names."""
        blocks = self.blocks()
        terms = []
        for i, var in indices.items():
            d, blk = blocks[i]
            if d == dim:
                terms.append(f"{var} * {blk}" if blk != 1 else var)
        return " + ".join(terms) if terms else "0"

    # -- per-operand geometry ---------------------------------------------

    def real_dim(self, dim: int) -> int:
        return self.w.real_dims[dim]

    def operand_plan(self, operand: str) -> OperandPlan:
        w = self.w
        cut = self.s.cuts[operand][0]
        transfers = 1
        for i in range(cut, self.n):
            transfers *= self.s.temporal[i][1]
        tile = list(self.s.spatial)
        rel = set(w.relevant(operand))
        tiled_dims = set()
        for i in range(cut):
            d, p = self.s.temporal[i]
            if d in rel:
                tile[d] *= p
        for i in range(cut, self.n):
            d, _ = self.s.temporal[i]
            if d in rel:
                tiled_dims.add(d)

        act = w.act_layout
        if w.kind == "add":
            dims = ("OY", "OX", "K") if act == "NHWC" else ("K", "OY", "OX")
            full = tuple(self.real_dim(DIM_INDEX[d]) for d in dims)
            unclamped = tuple(tile[DIM_INDEX[d]] for d in dims)
            dynamic = tuple(DIM_INDEX[d] in tiled_dims or tile[DIM_INDEX[d]] < full[j]
                            for j, d in enumerate(dims))
            elem = 1 if operand != "O" else DTYPE_SIZE[self.out_spec.dtype]
            cmap = {"C": dims.index("K"), "Y": dims.index("OY"), "X": dims.index("OX")}
        elif operand == "I":
            if w.kind == "dense":
                dims, full = ("C",), (self.real_dim(C),)
                unclamped = (tile[C],)
                dynamic = (DIM_INDEX["C"] in tiled_dims or tile[C] < full[0],)
            else:
                iy_real = self._input_extent(0)
                ix_real = self._input_extent(1)
                win_y = (tile[OY] - 1) * w.strides[0] + (tile[FY] - 1) * w.dilation[0] + 1
                win_x = (tile[OX] - 1) * w.strides[1] + (tile[FX] - 1) * w.dilation[1] + 1
                dyn_y = OY in tiled_dims or FY in tiled_dims or win_y < iy_real or self._pad()[0] > 0
                dyn_x = OX in tiled_dims or FX in tiled_dims or win_x < ix_real or self._pad()[1] > 0
                dyn_c = C in tiled_dims or tile[C] < self.real_dim(C)
                if act == "NHWC":
                    dims = ("IY", "IX", "C")
                    full = (iy_real, ix_real, self.real_dim(C))
                    unclamped = (win_y, win_x, tile[C])
                    dynamic = (dyn_y, dyn_x, dyn_c)
                else:
                    dims = ("C", "IY", "IX")
                    full = (self.real_dim(C), iy_real, ix_real)
                    unclamped = (tile[C], win_y, win_x)
                    dynamic = (dyn_c, dyn_y, dyn_x)
            elem = 1
            cmap = ({"C": dims.index("C")} | ({"Y": dims.index("IY"), "X": dims.index("IX")}
                                              if len(dims) == 3 else {}))
        elif operand == "W":
            if w.kind == "dense":
                dims = ("K", "C")
                full = (self.real_dim(K), self.real_dim(C))
                unclamped = (tile[K], tile[C])
            else:
                dims = w.weight_dim_order
                cpg = self.real_dim(C) // w.groups
                by = {"K": (self.real_dim(K), tile[K]),
                      "C": (cpg, w.reduction_channels(tile[C])),
                      "FY": (self.real_dim(FY), tile[FY]),
                      "FX": (self.real_dim(FX), tile[FX])}
                full = tuple(by[d][0] for d in dims)
                unclamped = tuple(by[d][1] for d in dims)
            dynamic = tuple(DIM_INDEX.get(d, -1) in tiled_dims or u < f
                            for d, u, f in zip(dims, unclamped, full))
            elem = 1
            cmap = {d: i for i, d in enumerate(dims)}
        else:  # O
            if w.kind == "dense":
                dims, full = ("K",), (self.real_dim(K),)
                unclamped = (tile[K],)
                dynamic = (DIM_INDEX["K"] in tiled_dims or tile[K] < full[0],)
                cmap = {"K": 0}
            else:
                dims = ("OY", "OX", "K") if act == "NHWC" else ("K", "OY", "OX")
                full = tuple(self.real_dim(DIM_INDEX[d]) for d in dims)
                unclamped = tuple(tile[DIM_INDEX[d]] for d in dims)
                dynamic = tuple(DIM_INDEX[d] in tiled_dims or u < f
                                for d, u, f in zip(dims, unclamped, full))
                cmap = {"K": dims.index("K"), "Y": dims.index("OY"), "X": dims.index("OX")}
            elem = DTYPE_SIZE[self.out_spec.dtype]

        tail = _static_tail(unclamped, full, dynamic)
        max_box = 1
        for u, f in zip(unclamped, full):
            max_box *= min(u, f)
        return OperandPlan(
            operand=operand, cut=cut, transfers=transfers,
            storage_dims=tuple(dims), full=tuple(full),
            unclamped=tuple(unclamped), tail=tail,
            parent_strides=tuple(_suffix_products(full)),
            max_box_elems=max_box, elem=elem,
            buffering=self.s.buffering[operand],
            canonical_map=cmap,
        )

    def _pad(self) -> tuple[int, int]:
        if self.anchor.op != "conv2d":
            return (0, 0)
        _, _, pt, pl, _, _, _, _, _ = _conv_attrs(self.anchor.attrs)
        return (pt, pl)

    def _input_extent(self, axis: int) -> int:
        x = self.specs[self.anchor.inputs[0]]
        if x.rank != 4:
            return 1
        ax = {c: i for i, c in enumerate(x.layout)}
        return x.shape[ax["H" if axis == 0 else "W"]]

    # -- geometry helper functions (emitted C) ------------------------------

    def geom_fn_name(self, operand: str) -> str:
        return f"{self.name}_geom_{operand}"

    def emit_geom_fn(self, plan: OperandPlan) -> list[str]:
        """static void <layer>_geom_X(long l, match_tile_geom_t *g)

        Decomposes the linear transfer index into outer-loop coordinates and
        fills the tile box: clamped extents, parent/box strides, src offset."""
        w = self.w
        out = [f"static void {self.geom_fn_name(plan.operand)}(long l, match_tile_geom_t *g)", "{"]
        emit = out.append
        # mixed-radix decomposition over loops >= cut, outermost slowest
        weights = []
        acc = 1
        for i in range(plan.cut, self.n):
            weights.append(acc)
            acc *= self.s.temporal[i][1]
        indices = {}
        for pos, i in enumerate(range(plan.cut, self.n)):
            p = self.s.temporal[i][1]
            emit(f"    int t{i} = (int)(l / {weights[pos]}) % {p};")
            indices[i] = f"t{i}"
        for d in range(6):
            emit(f"    int org{DIM_NAMES[d].lower()} = {self.origin_expr(d, indices)};")
        emit("    (void)orgk; (void)orgc; (void)orgoy; (void)orgox; (void)orgfy; (void)orgfx;")

        dims = plan.storage_dims
        exts, los = [], []
        for j, dim in enumerate(dims):
            fullj = plan.full[j]
            if dim in ("IY", "IX"):
                a = 0 if dim == "IY" else 1
                o_org = f"orgoy" if a == 0 else "orgox"
                f_org = "orgfy" if a == 0 else "orgfx"
                stride, dil = w.strides[a], w.dilation[a]
                pad = self._pad()[a]
                tile_o = self._tile_extent(OY if a == 0 else OX, plan.cut)
                tile_f = self._tile_extent(FY if a == 0 else FX, plan.cut)
                real_o = self.real_dim(OY if a == 0 else OX)
                real_f = self.real_dim(FY if a == 0 else FX)
                emit(f"    int oe{j} = {tile_o} < {real_o} - {o_org} ? {tile_o} : {real_o} - {o_org};")
                emit(f"    int fe{j} = {tile_f} < {real_f} - {f_org} ? {tile_f} : {real_f} - {f_org};")
                emit(f"    int lo{j} = {o_org} * {stride} + {f_org} * {dil} - {pad};")
                emit(f"    int hi{j} = lo{j} + (oe{j} - 1) * {stride} + (fe{j} - 1) * {dil};")
                emit(f"    if (lo{j} < 0) lo{j} = 0;")
                emit(f"    if (hi{j} > {fullj - 1}) hi{j} = {fullj - 1};")
                emit(f"    int e{j} = hi{j} - lo{j} + 1; if (e{j} < 0) e{j} = 0;")
            else:
                base = {"K": "orgk", "C": "orgc", "OY": "orgoy", "OX": "orgox",
                        "FY": "orgfy", "FX": "orgfx"}[dim]
                tile_d = plan.unclamped[j]
                if plan.operand == "W" and dim == "C" and w.kind == "conv":
                    cpg = self.real_dim(C) // w.groups
                    emit(f"    int lo{j} = {base} % {cpg};")
                    red = w.reduction_channels(self._tile_extent(C, plan.cut))
                    emit(f"    int e{j} = {red} < {cpg} - lo{j} ? {red} : {cpg} - lo{j};")
                else:
                    emit(f"    int lo{j} = {base};")
                    emit(f"    int e{j} = {tile_d} < {fullj} - lo{j} ? {tile_d} : {fullj} - lo{j};")
            exts.append(f"e{j}")
            los.append(f"lo{j}")
        nd = len(dims)
        emit(f"    g->ndim = {nd};")
        emit(f"    g->tail = {plan.tail};")
        for j in range(4):
            emit(f"    g->ext[{j}] = {exts[j] if j < nd else 1};")
            emit(f"    g->pstr[{j}] = {plan.parent_strides[j] if j < nd else 0};")
            emit(f"    g->lo[{j}] = {los[j] if j < nd else 0};")
        # packed box strides (suffix products of the clamped extents)
        emit(f"    g->bstr[{nd - 1}] = 1;")
        for j in range(nd - 2, -1, -1):
            emit(f"    g->bstr[{j}] = g->bstr[{j + 1}] * g->ext[{j + 1}];")
        for j in range(nd, 4):
            emit(f"    g->bstr[{j}] = 0;")
        off_terms = [f"(long)lo{j} * {plan.parent_strides[j]}" for j in range(nd)]
        emit(f"    g->src_off = {' + '.join(off_terms)};")
        run_terms = [f"g->ext[{j}]" for j in range(plan.tail, nd)]
        emit(f"    g->run = (long){' * '.join(run_terms)};")
        box_terms = [f"g->ext[{j}]" for j in range(nd)]
        emit(f"    g->box_elems = (long){' * '.join(box_terms)};")
        emit("}")
        return out

    def _tile_extent(self, dim: int, cut: int) -> int:
        ext = self.s.spatial[dim]
        for i in range(cut):
            d, p = self.s.temporal[i]
            if d == dim:
                ext *= p
        return ext

    # -- the layer function -------------------------------------------------

    def bound(self, generic: str) -> str:
        return self.module.binding(generic)

    def render(self) -> tuple[str, LayerStructure]:
        w = self.w
        plans = {o: self.operand_plan(o) for o in w.operands}
        ext_inputs = self._external_inputs()
        params = [f"const int8_t *{p}" for p, _ in ext_inputs]
        out_t = CT[self.out_spec.dtype]
        params.append(f"{out_t} *out0")
        plans["I"].parent_expr = ext_inputs[0][0]
        if w.kind == "add" and len(ext_inputs) > 1:
            plans["W"].parent_expr = ext_inputs[1][0]
        else:
            plans["W"].parent_expr = self.value_symbol(self.anchor.inputs[1])
        plans["O"].parent_expr = "out0"

        top: list[str] = []
        for o in ("I", "W", "O"):
            top.extend(self.emit_geom_fn(plans[o]))
            top.append("")
        rq = next((n for n in self.nodes if n.op == "requant"), None)
        if rq is not None:
            for key in ("M", "B"):
                if isinstance(rq.attrs[key], list):
                    arr = np.asarray(rq.attrs[key])
                    top.append(f"static const int32_t {self.name}_rq_{key.lower()}[{arr.size}] = {{")
                    top.append(f"    {_fmt_array(arr)}")
                    top.append("};")

        self.lines = top + [f"void {self.name}({', '.join(params)})", "{"]
        self.emit(f"{self.bound('match_platform_init')}();")
        dbl = {o: 2 if plans[o].buffering == "double" else 1 for o in w.operands}
        self.emit(f"int8_t *i_buf = (int8_t *){self.bound('match_mem_alloc_l1')}"
                  f"({dbl['I'] * plans['I'].max_box_elems});")
        self.emit(f"int8_t *w_buf = (int8_t *){self.bound('match_mem_alloc_l1')}"
                  f"({dbl['W'] * plans['W'].max_box_elems});")
        self.emit(f"int32_t *o_acc = (int32_t *){self.bound('match_mem_alloc_l1')}"
                  f"({dbl['O'] * plans['O'].max_box_elems * 4});")
        self.emit(f"{out_t} *o_stage = ({out_t} *){self.bound('match_mem_alloc_l1')}"
                  f"({dbl['O'] * plans['O'].max_box_elems * plans['O'].elem});")
        self.emit("long i_x = 0, w_x = 0, o_x = 0;")
        self.emit("match_tile_geom_t gi, gw, go, gp;")
        self.emit("const int8_t *i_cur = i_buf; const int8_t *w_cur = w_buf;")
        self.emit("int32_t *acc_cur = o_acc;")
        self.emit(f"{out_t} *stage_cur = o_stage;")
        self.emit("(void)gp;")

        structure = LayerStructure(self.name, [], [], 0)
        loop_vars: dict[int, str] = {}
        # outermost-first nest
        for depth in range(self.n + 1):
            for o in ("I", "W"):
                if self.n - plans[o].cut == depth:
                    self._emit_load_site(o, plans[o])
                    structure.sites.append(CopySite(o, plans[o].cut, depth, plans[o].transfers))
            if self.n - plans["O"].cut == depth:
                self._emit_output_head(plans["O"])
                structure.sites.append(CopySite("O", plans["O"].cut, depth, plans["O"].transfers))
            if depth < self.n:
                i = self.n - 1 - depth
                d, p = self.s.temporal[i]
                var = f"t{i}"
                loop_vars[i] = var
                structure.loops.append((DIM_NAMES[d], p))
                self.emit(f"for (int {var} = 0; {var} < {p}; ++{var}) {{")
                self.indent += 1
        structure.kernel_depth = self.n
        self._emit_kernel(plans, loop_vars)
        for depth in range(self.n, -1, -1):
            if depth < self.n:
                self.indent -= 1
                self.emit("}")
            for o in ("I", "W"):
                if self.n - plans[o].cut == depth:
                    self.emit(f"{'i' if o == 'I' else 'w'}_x++;")
            if self.n - plans["O"].cut == depth:
                self._emit_output_tail(plans["O"])

        self.emit(f"{self.bound('match_mem_free_l1')}(o_stage);")
        self.emit(f"{self.bound('match_mem_free_l1')}(o_acc);")
        self.emit(f"{self.bound('match_mem_free_l1')}(w_buf);")
        self.emit(f"{self.bound('match_mem_free_l1')}(i_buf);")
        self.emit(f"{self.bound('match_platform_close')}();")
        self.lines.append("}")
        src = "\n".join([
            f'#include <stdint.h>',
            f'#include <string.h>',
            f'#include "{API_HEADER_NAME}"',
            f'#include "{BINDINGS_HEADER_NAME}"',
            f'#include "{TILE_HEADER_NAME}"',
            f'#include "weights.h"',
            "",
        ] + self.lines) + "\n"
        return src, structure

    def _external_inputs(self) -> list[tuple[str, str]]:
        if self.w.kind == "add" and self.anchor.inputs[1] not in self.g.constants:
            return [("in0", self.anchor.inputs[0]), ("in1", self.anchor.inputs[1])]
        return [("in0", self.anchor.inputs[0])]

    def _emit_load_site(self, o: str, plan: OperandPlan):
        geom = self.geom_fn_name(o)
        gvar = "gi" if o == "I" else "gw"
        buf = "i_buf" if o == "I" else "w_buf"
        cur = "i_cur" if o == "I" else "w_cur"
        xvar = "i_x" if o == "I" else "w_x"
        copy = self.bound("match_mem_copy")
        trace = self.bound("match_trace_copy")
        sync = self.bound("match_sync_transfers")
        box = plan.max_box_elems
        src = f"(void *){plan.parent_expr}"
        if plan.buffering == "double":
            self.emit(f"if ({xvar} == 0) {{")
            self.emit(f"    {geom}(0, &{gvar});")
            self.emit(f'    {trace}("{self.name}", "{o}");')
            self.emit(f"    match_tile_move({buf}, {src}, &{gvar}, 1, 1, {copy});")
            self.emit("}")
            self.emit(f"if ({xvar} + 1 < {plan.transfers}) {{")
            self.emit(f"    {geom}({xvar} + 1, &gp);")
            self.emit(f'    {trace}("{self.name}", "{o}");')
            self.emit(f"    match_tile_move({buf} + (({xvar} + 1) & 1) * {box}, {src}, &gp, 1, 1, {copy});")
            self.emit("}")
            self.emit(f"{sync}();")
            self.emit(f"{geom}({xvar}, &{gvar});")
            self.emit(f"{cur} = {buf} + ({xvar} & 1) * {box};")
        else:
            self.emit(f"{geom}({xvar}, &{gvar});")
            self.emit(f'{trace}("{self.name}", "{o}");')
            self.emit(f"match_tile_move({buf}, {src}, &{gvar}, 1, 1, {copy});")
            self.emit(f"{sync}();")
            self.emit(f"{cur} = {buf};")

    def _emit_output_head(self, plan: OperandPlan):
        geom = self.geom_fn_name("O")
        if plan.buffering == "double":
            self.emit(f"if (o_x >= 2) {self.bound('match_sync_transfers')}();")
            self.emit(f"acc_cur = o_acc + (o_x & 1) * {plan.max_box_elems};")
            self.emit(f"stage_cur = o_stage + (o_x & 1) * {plan.max_box_elems};")
        self.emit(f"{geom}(o_x, &go);")
        self.emit("memset(acc_cur, 0, (size_t)go.box_elems * 4);")

    def _emit_output_tail(self, plan: OperandPlan):
        w = self.w
        # elementwise tail over the clamped box, then one logical write-back
        dims = plan.storage_dims
        nd = len(dims)
        kpos = plan.canonical_map.get("K", plan.canonical_map.get("C", 0))
        self.emit("{")
        self.indent += 1
        idx = [f"j{j}" for j in range(nd)]
        for j in range(nd):
            self.emit(f"for (int {idx[j]} = 0; {idx[j]} < go.ext[{j}]; ++{idx[j]}) {{")
            self.indent += 1
        off = " + ".join(f"{idx[j]} * go.bstr[{j}]" for j in range(nd))
        self.emit(f"long off = {off};")
        self.emit("int32_t v = acc_cur[off];")
        self.emit(f"int gk = go.lo[{kpos}] + {idx[kpos]};")
        self.emit("(void)gk;")
        for node in self.nodes[1:]:
            if node.op == "bias_add":
                sym = self.value_symbol(node.inputs[1])
                self.emit(f"v += {sym}[gk];")
            elif node.op == "requant":
                m = f"{self.name}_rq_m[gk]" if isinstance(node.attrs["M"], list) else str(node.attrs["M"])
                b = f"{self.name}_rq_b[gk]" if isinstance(node.attrs["B"], list) else str(node.attrs["B"])
                self.emit(f"long long rq = (long long)v * {m} + {b};")
                self.emit(f"v = (int32_t)(rq >> {node.attrs['S']});")
                self.emit("v = v < -128 ? -128 : (v > 127 ? 127 : v);")
            elif node.op == "relu":
                self.emit("v = v < 0 ? 0 : v;")
            elif node.op == "clip":
                lo, hi = node.attrs["min"], node.attrs["max"]
                self.emit(f"v = v < {lo} ? {lo} : (v > {hi} ? {hi} : v);")
        self.emit(f"stage_cur[off] = ({CT[self.out_spec.dtype]})v;")
        for j in range(nd):
            self.indent -= 1
            self.emit("}")
        self.indent -= 1
        self.emit("}")
        self.emit(f'{self.bound("match_trace_copy")}("{self.name}", "O");')
        self.emit(f"match_tile_move(stage_cur, (void *)out0, &go, {plan.elem}, 0, "
                  f"{self.bound('match_mem_copy')});")
        if plan.buffering != "double":
            self.emit(f"{self.bound('match_sync_transfers')}();")
        self.emit("o_x++;")

    def _emit_kernel(self, plans: dict[str, OperandPlan], loop_vars: dict[int, str]):
        w = self.w
        orgs = {d: self.origin_expr(d, loop_vars) for d in range(6)}
        sp = self.s.spatial
        real = self.w.real_dims

        def rng(var: str, d: int):
            self.emit(f"int {var}0 = {orgs[d]};")
            self.emit(f"int {var}1 = {var}0 + {sp[d]} < {real[d]} ? {var}0 + {sp[d]} : {real[d]};")

        if w.kind == "add":
            self.emit("match_add_ctx_t ctx;")
            rng("kk", K)
            rng("yy", OY)
            rng("xx", OX)
            for name, gv, plan in (("a", "gi", plans["I"]), ("b", "gw", plans["W"]),
                                   ("acc", "go", plans["O"])):
                m = plan.canonical_map
                self.emit(f"ctx.{name}_lo_c = {gv}.lo[{m['C'] if 'C' in m else m['K']}];")
                self.emit(f"ctx.{name}_lo_y = {gv}.lo[{m['Y']}];")
                self.emit(f"ctx.{name}_lo_x = {gv}.lo[{m['X']}];")
                self.emit(f"ctx.{name}_s_c = {gv}.bstr[{m['C'] if 'C' in m else m['K']}];")
                self.emit(f"ctx.{name}_s_y = {gv}.bstr[{m['Y']}];")
                self.emit(f"ctx.{name}_s_x = {gv}.bstr[{m['X']}];")
            self.emit("ctx.a = i_cur; ctx.b = w_cur; ctx.acc = acc_cur;")
            self.emit("ctx.c0 = kk0; ctx.c1 = kk1; ctx.oy0 = yy0; ctx.oy1 = yy1;")
            self.emit("ctx.ox0 = xx0; ctx.ox1 = xx1;")
            self.emit(f"{self.bound('match_kernel_' + self.w.pattern)}(&ctx);")
            return

        self.emit("match_conv_ctx_t ctx;")
        for v, d in (("kk", K), ("cc", C), ("yy", OY), ("xx", OX), ("fy", FY), ("fx", FX)):
            rng(v, d)
        mi = plans["I"].canonical_map
        if w.kind == "dense":
            self.emit("ctx.in_lo_c = gi.lo[0]; ctx.in_lo_y = 0; ctx.in_lo_x = 0;")
            self.emit("ctx.in_s_c = gi.bstr[0]; ctx.in_s_y = 0; ctx.in_s_x = 0;")
        else:
            self.emit(f"ctx.in_lo_c = gi.lo[{mi['C']}]; ctx.in_lo_y = gi.lo[{mi['Y']}]; "
                      f"ctx.in_lo_x = gi.lo[{mi['X']}];")
            self.emit(f"ctx.in_s_c = gi.bstr[{mi['C']}]; ctx.in_s_y = gi.bstr[{mi['Y']}]; "
                      f"ctx.in_s_x = gi.bstr[{mi['X']}];")
        mw = plans["W"].canonical_map
        if w.kind == "dense":
            self.emit("ctx.wt_lo_k = gw.lo[0]; ctx.wt_lo_c = gw.lo[1];")
            self.emit("ctx.wt_s_k = gw.bstr[0]; ctx.wt_s_c = gw.bstr[1];")
            self.emit("ctx.wt_lo_fy = 0; ctx.wt_lo_fx = 0; ctx.wt_s_fy = 0; ctx.wt_s_fx = 0;")
        else:
            self.emit(f"ctx.wt_lo_k = gw.lo[{mw['K']}]; ctx.wt_lo_c = gw.lo[{mw['C']}];")
            self.emit(f"ctx.wt_lo_fy = gw.lo[{mw['FY']}]; ctx.wt_lo_fx = gw.lo[{mw['FX']}];")
            self.emit(f"ctx.wt_s_k = gw.bstr[{mw['K']}]; ctx.wt_s_c = gw.bstr[{mw['C']}];")
            self.emit(f"ctx.wt_s_fy = gw.bstr[{mw['FY']}]; ctx.wt_s_fx = gw.bstr[{mw['FX']}];")
        mo = plans["O"].canonical_map
        if w.kind == "dense":
            self.emit("ctx.acc_lo_k = go.lo[0]; ctx.acc_lo_y = 0; ctx.acc_lo_x = 0;")
            self.emit("ctx.acc_s_k = go.bstr[0]; ctx.acc_s_y = 0; ctx.acc_s_x = 0;")
        else:
            self.emit(f"ctx.acc_lo_k = go.lo[{mo['K']}]; ctx.acc_lo_y = go.lo[{mo['Y']}]; "
                      f"ctx.acc_lo_x = go.lo[{mo['X']}];")
            self.emit(f"ctx.acc_s_k = go.bstr[{mo['K']}]; ctx.acc_s_y = go.bstr[{mo['Y']}]; "
                      f"ctx.acc_s_x = go.bstr[{mo['X']}];")
        self.emit("ctx.in = i_cur; ctx.wt = w_cur; ctx.acc = acc_cur;")
        self.emit("ctx.k0 = kk0; ctx.k1 = kk1; ctx.c0 = cc0; ctx.c1 = cc1;")
        self.emit("ctx.oy0 = yy0; ctx.oy1 = yy1; ctx.ox0 = xx0; ctx.ox1 = xx1;")
        self.emit("ctx.fy0 = fy0; ctx.fy1 = fy1; ctx.fx0 = fx0; ctx.fx1 = fx1;")
        if w.kind == "dense":
            self.emit("ctx.iy = 1; ctx.ix = 1; ctx.sy = 1; ctx.sx = 1;")
            self.emit("ctx.pt = 0; ctx.pl = 0; ctx.dy = 1; ctx.dx = 1;")
            self.emit(f"ctx.cpg = {real[C]}; ctx.kpg = {real[K]};")
        else:
            pt, pl = self._pad()
            self.emit(f"ctx.iy = {self._input_extent(0)}; ctx.ix = {self._input_extent(1)};")
            self.emit(f"ctx.sy = {w.strides[0]}; ctx.sx = {w.strides[1]};")
            self.emit(f"ctx.pt = {pt}; ctx.pl = {pl};")
            self.emit(f"ctx.dy = {w.dilation[0]}; ctx.dx = {w.dilation[1]};")
            self.emit(f"ctx.cpg = {real[C] // w.groups}; ctx.kpg = {real[K] // w.groups};")
        self.emit(f"{self.bound('match_kernel_' + self.w.pattern)}(&ctx);")
