"""Static arena planning for intermediate activations.

Deterministic first-fit-decreasing interval placement over decision-level
tensor lifetimes; two simultaneously live tensors never overlap. Buffers are
aligned to their element size so i32 intermediates stay addressable.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dispatch import PartitionedGraph
from .ir import DTYPE_SIZE, value_specs


def _align_up(n: int, a: int) -> int:
    return -(-n // a) * a


@dataclass
class MemoryPlan:
    offsets: dict[str, int]
    sizes: dict[str, int]
    arena_bytes: int
    lifetimes: dict[str, tuple[int, int]]


def plan_static_memory(pg: PartitionedGraph) -> MemoryPlan:
    g = pg.graph
    specs = value_specs(g)
    static = set(g.input_names()) | set(g.constants)

    # decision-level lifetimes: a region's output is born at its decision
    # index and dies with its last consumer (graph outputs live to the end)
    births: dict[str, int] = {}
    deaths: dict[str, int] = {}
    nodes_by_id = g.node_map()
    for i, d in enumerate(pg.decisions):
        out = d.node_ids[-1]
        births[out] = i
        deaths.setdefault(out, i)
        internal = set(d.node_ids)
        for nid in d.node_ids:
            for ref in nodes_by_id[nid].inputs:
                if ref in static or ref in internal:
                    continue
                deaths[ref] = max(deaths.get(ref, 0), i)
    last = len(pg.decisions)
    for ref in g.outputs:
        if ref in births:
            deaths[ref] = last

    sizes = {name: specs[name].nbytes for name in births}
    aligns = {name: DTYPE_SIZE[specs[name].dtype] for name in births}
    order = sorted(births, key=lambda n: (-sizes[n], births[n], n))
    offsets: dict[str, int] = {}
    arena = 0
    for name in order:
        b0, d0 = births[name], deaths[name]
        conflicts = sorted(
            (offsets[o], offsets[o] + sizes[o]) for o in offsets
            if not (deaths[o] < b0 or births[o] > d0))
        off = 0
        for lo, hi in conflicts:
            if off + sizes[name] <= lo:
                break
            off = max(off, _align_up(hi, aligns[name]))
        offsets[name] = off
        arena = max(arena, off + sizes[name])
    lifetimes = {n: (births[n], deaths[n]) for n in births}
    return MemoryPlan(offsets, sizes, arena, lifetimes)
