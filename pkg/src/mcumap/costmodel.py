"""Analytical cycle models for the built-in execution modules, plus the
shared transfer/chunk arithmetic and the spatial-adaptation rule.

All functions are pure integer arithmetic; constants can be overridden per
module so the models stay calibratable against real silicon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .target import MemoryLevel


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class TileShape:
    """Extents of one L1-resident tile. `c` is the reduction extent per
    output (input channels / groups); dense tiles use oy = ox = fy = fx = 1."""
    k: int
    c: int
    oy: int
    ox: int
    fy: int = 1
    fx: int = 1


def contiguous_chunks(tile: Sequence[int], full: Sequence[int]) -> int:
    """Number of maximal contiguous runs a tile box occupies inside its
    parent tensor, both given in the layout's storage-major order.

    The longest fully-covered suffix plus the first partially-covered
    dimension form one contiguous run; every outer coordinate starts a new
    run.
    """
    assert len(tile) == len(full)
    assert all(1 <= t <= f for t, f in zip(tile, full))
    s = len(full)
    while s > 0 and tile[s - 1] == full[s - 1]:
        s -= 1
    if s == 0:
        return 1
    chunks = 1
    for t in tile[:s - 1]:
        chunks *= t
    return chunks


def walk_chunks(tile: Sequence[int], full: Sequence[int]) -> int:
    """Independent oracle for contiguous_chunks: enumerate every element's
    linear index and count maximal runs of consecutive addresses."""
    import itertools
    strides = [1] * len(full)
    for i in range(len(full) - 2, -1, -1):
        strides[i] = strides[i + 1] * full[i + 1]
    addrs = sorted(sum(i * s for i, s in zip(idx, strides))
                   for idx in itertools.product(*(range(t) for t in tile)))
    runs = 1
    for prev, cur in zip(addrs, addrs[1:]):
        if cur != prev + 1:
            runs += 1
    return runs


def transfer_cycles(tile_bytes: int, chunks: int, level: MemoryLevel) -> int:
    """Cycles for one transfer across the boundary below `level`."""
    assert tile_bytes >= 0
    return ceil_div(tile_bytes, level.bandwidth) + chunks * level.chunk_overhead


# ---------------------------------------------------------------------------
# Per-module compute models (L_ops)
# ---------------------------------------------------------------------------

DIANA_DEFAULTS = {"c_read": 1, "c_mac": 1, "c_write": 1, "c_elem": 23}
GAP9_CLUSTER_DEFAULTS = {"c_inner": 2, "c_setup": 200}
NE16_DEFAULTS = {"c_block_3x3": 59, "c_block_1x1": 27, "c_setup": 300,
                 "b_k": 32, "b_c": 16, "b_oy": 3, "b_ox": 3}


def diana_layer_cycles(tiles: Iterable[TileShape], constants: dict | None = None,
                       unrolls: dict | None = None) -> int:
    """16x16 MAC array: read/MAC/write per temporal iteration plus the
    elementwise-and-store cost on every output write event."""
    c = {**DIANA_DEFAULTS, **(constants or {})}
    uk = (unrolls or {}).get("K", 16)
    uox = (unrolls or {}).get("OX", 16)
    per_iter = c["c_read"] + c["c_mac"] + c["c_write"]
    total = 0
    for t in tiles:
        writes = ceil_div(t.k, uk) * ceil_div(t.ox, uox) * t.oy
        iters = writes * t.c * t.fy * t.fx
        total += per_iter * iters + c["c_elem"] * writes
    return total


def gap9_cluster_layer_cycles(tiles: Iterable[TileShape], constants: dict | None = None,
                              unrolls: dict | None = None) -> int:
    """8-core cluster running library kernels unrolled OX=2 / K=4 / OY=8."""
    c = {**GAP9_CLUSTER_DEFAULTS, **(constants or {})}
    uk = (unrolls or {}).get("K", 4)
    uoy = (unrolls or {}).get("OY", 8)
    uox = (unrolls or {}).get("OX", 2)
    total = 0
    for t in tiles:
        iters = ceil_div(t.k, uk) * ceil_div(t.oy, uoy) * ceil_div(t.ox, uox) \
            * t.c * t.fy * t.fx
        total += c["c_inner"] * iters + c["c_setup"]
    return total


def ne16_layer_cycles(tiles: Iterable[TileShape], constants: dict | None = None,
                      unrolls: dict | None = None) -> int:
    """NE16 job model: 3x3 (or 1x1) output blocks over 16-channel input and
    32-channel output slices; parametric stand-in for the vendor model."""
    del unrolls  # block geometry is fixed by the engine, not the schedule
    c = {**NE16_DEFAULTS, **(constants or {})}
    total = 0
    for t in tiles:
        if t.fy > 3 or t.fx > 3:
            raise AssertionError(f"ne16 cost model: unsupported filter {t.fy}x{t.fx}")
        blocks = ceil_div(t.k, c["b_k"]) * ceil_div(t.c, c["b_c"]) \
            * ceil_div(t.oy, c["b_oy"]) * ceil_div(t.ox, c["b_ox"])
        # pointwise tiles hit the fast 1x1 path; anything else runs 3x3 mode
        block_cost = c["c_block_1x1"] if (t.fy, t.fx) == (1, 1) else c["c_block_3x3"]
        total += block_cost * blocks + c["c_setup"]
    return total


COMPUTE_MODELS = {
    "diana": diana_layer_cycles,
    "gap9_cluster": gap9_cluster_layer_cycles,
    "ne16": ne16_layer_cycles,
}


# ---------------------------------------------------------------------------
# Spatial adaptation
# ---------------------------------------------------------------------------

def largest_divisor_below(n: int, bound: int) -> int:
    for d in range(min(bound - 1, n), 0, -1):
        if n % d == 0:
            return d
    return 1


def choose_spatial_adaptation(dim_size: int, optimal_unroll: int) -> tuple[str, int]:
    """("keep", unroll) to run with (possibly reduced) parallelism, or
    ("pad", padded_extent) when reduced parallelism would cost extra
    iterations over just padding the dimension."""
    assert dim_size >= 1 and optimal_unroll >= 1
    if dim_size % optimal_unroll == 0:
        return ("keep", optimal_unroll)
    d = largest_divisor_below(dim_size, optimal_unroll)
    iters_reduced = dim_size // d
    iters_padded = ceil_div(dim_size, optimal_unroll)
    if iters_reduced == iters_padded:
        return ("keep", d)
    return ("pad", optimal_unroll * iters_padded)
