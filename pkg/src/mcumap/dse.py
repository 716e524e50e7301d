"""Temporal-mapping design-space exploration.

Loop extents are split into prime factors; every distinct ordering of the
factor multiset is a scheduling candidate. A greedy allocator absorbs
factors innermost-out into the lowest non-full memory level per operand
(operands may end up cut at different levels), double buffering is attempted
on asynchronous modules, and the module's analytical cost model picks the
cheapest feasible schedule.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from math import factorial

from .costmodel import COMPUTE_MODELS, TileShape, contiguous_chunks, transfer_cycles
from .target import DIM_NAMES, ExecModule
from .workload import Workload, scratch_bytes

LoopFactor = tuple[int, int]  # (dim index into DIM_NAMES, prime factor)


def prime_factorize(n: int) -> list[int]:
    assert n >= 1
    out = []
    d = 2
    while d * d <= n:
        while n % d == 0:
            out.append(d)
            n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


def temporal_factors(w: Workload) -> tuple[LoopFactor, ...]:
    """Canonical (ascending) factor multiset of the post-spatial loop extents."""
    fs: list[LoopFactor] = []
    for i, ext in enumerate(w.temporal_extents()):
        fs.extend((i, p) for p in prime_factorize(ext))
    return tuple(sorted(fs))


def ordering_count(factors: tuple[LoopFactor, ...]) -> int:
    total = factorial(len(factors))
    seen: dict[LoopFactor, int] = {}
    for f in factors:
        seen[f] = seen.get(f, 0) + 1
    for m in seen.values():
        total //= factorial(m)
    return total


def enumerate_orderings(factors: tuple[LoopFactor, ...], cap: int | None = None):
    """Distinct multiset permutations in lexicographic order (generator);
    adjacent identical factors are the only collapsed equivalence."""
    items = sorted(set(factors))
    counts = {f: factors.count(f) for f in items}
    prefix: list[LoopFactor] = []
    emitted = 0

    def rec():
        nonlocal emitted
        if cap is not None and emitted >= cap:
            return
        if len(prefix) == len(factors):
            emitted += 1
            yield tuple(prefix)
            return
        for f in items:
            if counts[f] == 0:
                continue
            counts[f] -= 1
            prefix.append(f)
            yield from rec()
            prefix.pop()
            counts[f] += 1

    return rec()


@dataclass
class Schedule:
    spatial: tuple[int, ...]                 # resolved unroll per dim
    temporal: tuple[LoopFactor, ...]         # innermost first
    cuts: dict[str, tuple[int, ...]]         # operand -> cut per level boundary
    buffering: dict[str, str]                # operand -> single | double
    level_mults: dict[str, tuple[int, ...]]  # capacity multiplier per boundary


@dataclass
class CostBreakdown:
    total: int
    l_ops: int
    l_mem: dict[str, list[dict]]             # operand -> per-boundary records
    composition: str
    macs: int

    @property
    def macs_per_cycle(self) -> float:
        return self.macs / self.total if self.total else 0.0

    def mem_cycles(self, operand: str) -> int:
        return sum(rec["cycles"] for rec in self.l_mem[operand])

    def transfers(self, operand: str, boundary: int = 0) -> int:
        return self.l_mem[operand][boundary]["transfers"]

    def to_doc(self) -> dict:
        return {
            "total_cycles": self.total,
            "l_ops_cycles": self.l_ops,
            "l_mem": {op: [dict(r) for r in recs] for op, recs in self.l_mem.items()},
            "composition": self.composition,
            "macs": self.macs,
            "macs_per_cycle": round(self.macs_per_cycle, 6),
        }


@dataclass
class SearchLimits:
    max_orderings: int = 200_000
    seed: int = 0
    population: int = 20
    generations: int = 20
    mutation: float = 0.25
    elite: int = 4


def tile_extents(w: Workload, operand: str, temporal: tuple[LoopFactor, ...],
                 below: int) -> tuple[int, ...]:
    """Per-dim extents of `operand`'s tile covering loops below index `below`."""
    ext = list(w.spatial)
    rel = w.relevant(operand)
    for i in range(below):
        d, p = temporal[i]
        if d in rel:
            ext[d] *= p
    return tuple(ext)


def compute_extents(w: Workload, temporal, below: int) -> tuple[int, ...]:
    ext = list(w.spatial)
    for i in range(below):
        d, p = temporal[i]
        ext[d] *= p
    return tuple(ext)


class _Geometry:
    """Pre-resolved allocation geometry for one (workload, module) pair:
    per-operand byte formulas, level chains and budgets. Built once per
    search, reused across every candidate ordering."""

    __slots__ = ("ops", "chains", "budgets", "shared", "bytes_fns", "relevant",
                 "reduction", "async_mode", "top_feasible", "deep", "nlevels")

    def __init__(self, w: Workload, module: ExecModule):
        self.ops = w.operands
        levels = module.memory_levels
        index = {id(lvl): i for i, lvl in enumerate(levels)}
        self.nlevels = len(levels)
        self.chains = {o: tuple(index[id(lvl)] for lvl in module.levels_for(o))
                       for o in self.ops}
        self.deep = any(len(c) > 2 for c in self.chains.values())
        scratch = scratch_bytes(w, module)
        scratch_at = self.chains["I"][0]
        self.budgets = [lvl.size - (scratch if i == scratch_at else 0)
                        for i, lvl in enumerate(levels)]
        self.shared = [lvl.shared for lvl in levels]
        sy, sx = w.strides
        dy, dx = w.dilation
        g = w.groups
        if w.kind == "conv":
            if g == 1:
                wf = lambda e: e[0] * e[1] * e[4] * e[5]
            else:
                wf = lambda e: e[0] * max(1, e[1] // g) * e[4] * e[5]
            self.bytes_fns = {
                "I": lambda e: (((e[2] - 1) * sy + (e[4] - 1) * dy + 1)
                                * ((e[3] - 1) * sx + (e[5] - 1) * dx + 1) * e[1]),
                "W": wf,
                "O": lambda e: e[0] * e[2] * e[3],
            }
        elif w.kind == "dense":
            self.bytes_fns = {"I": lambda e: e[1], "W": lambda e: e[0] * e[1],
                              "O": lambda e: e[0]}
        else:
            act = lambda e: e[0] * e[2] * e[3]
            self.bytes_fns = {"I": act, "W": act, "O": act}
        self.relevant = {o: frozenset(w.relevant(o)) for o in self.ops}
        self.reduction = frozenset(w.reduction_dims())
        self.async_mode = module.cost.composition == "async_max"
        full = list(w.dims)
        top_used = [0] * len(levels)
        for o in self.ops:
            top_used[self.chains[o][-1]] += self.bytes_fns[o](full)
        self.top_feasible = all(
            top_used[i] <= levels[i].size or not levels[i].shared
            for i in range(len(levels)))
        if not all(self.bytes_fns[o](full) <= levels[self.chains[o][-1]].size
                   for o in self.ops):
            self.top_feasible = False


def _geometry(w: Workload, module: ExecModule) -> _Geometry:
    cache = getattr(w, "_geo_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(w, "_geo_cache", cache)
    geo = cache.get(id(module))
    if geo is None:
        geo = cache[id(module)] = _Geometry(w, module)
    return geo


def _allocate(ordering: tuple[LoopFactor, ...], w: Workload, module: ExecModule,
              geo: "_Geometry", mult: int) -> Schedule | None:
    """One greedy pass with a fixed buffering multiplier applied to every
    non-top residency (2 reserves ping-pong room up front)."""
    ops = geo.ops
    n = len(ordering)
    used = [0] * geo.nlevels

    ext = {o: list(w.spatial) for o in ops}
    cur = {o: geo.bytes_fns[o](ext[o]) for o in ops}
    at = {o: 0 for o in ops}  # position within the operand's chain
    cuts: dict[str, list[int]] = {o: [] for o in ops}

    def contribution(o: str, j: int, b: int) -> int:
        return b if j == len(geo.chains[o]) - 1 else b * mult

    for o in ops:
        used[geo.chains[o][0]] += contribution(o, 0, cur[o])
    for o in ops:
        for pos, li in enumerate(geo.chains[o][:-1]):
            over = (used[li] > geo.budgets[li]) if geo.shared[li] \
                else (cur[o] * mult > geo.budgets[li])
            if over:
                return None  # minimal tiles overflow this level

    for i in range(n):
        d, p = ordering[i]
        for o in ops:
            if d not in geo.relevant[o]:
                continue
            chain = geo.chains[o]
            fn = geo.bytes_fns[o]
            while True:
                j = at[o]
                li = chain[j]
                ext[o][d] *= p
                grown = fn(ext[o])
                if j == len(chain) - 1:
                    used[li] += grown - cur[o]
                    cur[o] = grown
                    break
                room = (used[li] + (grown - cur[o]) * mult <= geo.budgets[li]) \
                    if geo.shared[li] else (grown * mult <= geo.budgets[li])
                if room:
                    used[li] += (grown - cur[o]) * mult
                    cur[o] = grown
                    break
                # cut: the operand's remaining loops move one level up; the
                # snapshot (x mult) stays resident at this level
                ext[o][d] //= p
                if o == "O" and not cuts["O"] and geo.reduction:
                    for jj in range(i, n):
                        if ordering[jj][0] in geo.reduction:
                            return None  # partial sums would spill across levels
                cuts[o].append(i)
                at[o] = j + 1
                used[chain[j + 1]] += contribution(o, j + 1, cur[o])

    buffering = {}
    mults: dict[str, list[int]] = {}
    for o in ops:
        tiled = bool(cuts[o]) and cuts[o][0] < n
        buffering[o] = "double" if (mult == 2 and tiled) else "single"
        mults[o] = [mult] * len(cuts[o])
        while len(cuts[o]) < len(geo.chains[o]) - 1:
            cuts[o].append(n)
            mults[o].append(1)

    schedule = Schedule(
        spatial=w.spatial,
        temporal=tuple(ordering),
        cuts={o: tuple(cuts[o]) for o in ops},
        buffering=buffering,
        level_mults={o: tuple(mults[o]) for o in ops},
    )
    if geo.deep:
        # hierarchies beyond two levels: the greedy's mid-level view is
        # partial, so gate on the full footprint
        footprint = schedule_footprint(schedule, w, module)
        scratch = scratch_bytes(w, module)
        scratch_name = module.levels_for("I")[0].name
        for level in module.memory_levels:
            budget = level.size - (scratch if level.name == scratch_name else 0)
            if footprint.get(level.name, 0) > budget:
                return None
    return schedule


def allocate_levels(ordering: tuple[LoopFactor, ...], w: Workload,
                    module: ExecModule) -> Schedule | None:
    """Greedy innermost-out allocation; None when infeasible.

    Asynchronous modules reserve double-buffer room first and fall back to
    single-buffered allocation when capacity fails."""
    geo = _geometry(w, module)
    if not geo.top_feasible:
        return None
    if geo.async_mode:
        s = _allocate(ordering, w, module, geo, 2)
        if s is not None:
            return s
    return _allocate(ordering, w, module, geo, 1)


def schedule_footprint(s: Schedule, w: Workload, module: ExecModule) -> dict[str, int]:
    """Bytes resident per memory level (double-buffered tiles count twice)."""
    out: dict[str, int] = {}
    n = len(s.temporal)
    for o in w.operands:
        chain = module.levels_for(o)
        for j, level in enumerate(chain):
            below = s.cuts[o][j] if j < len(chain) - 1 else n
            mult = s.level_mults[o][j] if j < len(chain) - 1 else 1
            tile = w.operand_bytes(o, tile_extents(w, o, s.temporal, below)) * mult
            if level.shared:
                out[level.name] = out.get(level.name, 0) + tile
            else:
                out[level.name] = max(out.get(level.name, 0), tile)
    return out


def evaluate_schedule(s: Schedule, w: Workload, module: ExecModule) -> CostBreakdown:
    geo = _geometry(w, module)
    n = len(s.temporal)
    ops = geo.ops

    # compute cost over identical L1-residency epochs
    kernel_cut = min(s.cuts[o][0] if s.cuts[o] else n for o in ops)
    epochs = 1
    for i in range(kernel_cut, n):
        epochs *= s.temporal[i][1]
    ce = compute_extents(w, s.temporal, kernel_cut)
    tile = TileShape(k=ce[0], c=w.reduction_channels(ce[1]), oy=ce[2], ox=ce[3],
                     fy=ce[4], fx=ce[5])
    model = COMPUTE_MODELS[module.cost.model]
    unrolls = {DIM_NAMES[i]: u for i, u in enumerate(s.spatial) if u > 1}
    l_ops = epochs * model([tile], module.cost.constants, unrolls)

    l_mem: dict[str, list[dict]] = {}
    for o in ops:
        chain = module.levels_for(o)
        rel = geo.relevant[o]
        fn = geo.bytes_fns[o]
        recs = []
        for j in range(len(chain) - 1):
            cut = s.cuts[o][j]
            transfers = 1
            for i in range(cut, n):
                transfers *= s.temporal[i][1]
            te = list(s.spatial)
            for i in range(cut):
                d, p = s.temporal[i]
                if d in rel:
                    te[d] *= p
            parent_below = s.cuts[o][j + 1] if j + 1 < len(chain) - 1 else n
            pe = list(s.spatial)
            for i in range(parent_below):
                d, p = s.temporal[i]
                if d in rel:
                    pe[d] *= p
            chunks = contiguous_chunks(w.operand_extents(o, tuple(te)),
                                       w.operand_extents(o, tuple(pe)))
            tile_bytes = fn(te)
            per = transfer_cycles(tile_bytes, chunks, chain[j + 1])
            recs.append({
                "level": chain[j + 1].name,
                "transfers": transfers,
                "tile_bytes": tile_bytes,
                "chunks": chunks,
                "cycles": transfers * per,
            })
        l_mem[o] = recs

    composition = module.cost.composition
    if composition == "async_max":
        # double-buffered traffic overlaps compute; so does a whole-tensor
        # one-shot load (the steady-state max of the hardware model). Only
        # tiled-but-single-buffered streams serialize with the kernel.
        def overlaps(o: str) -> bool:
            if s.buffering[o] == "double":
                return True
            return all(r["transfers"] == 1 for r in l_mem[o])

        overlapped = sum(sum(r["cycles"] for r in l_mem[o]) for o in ops if overlaps(o))
        serial = sum(sum(r["cycles"] for r in l_mem[o]) for o in ops if not overlaps(o))
        total = max(l_ops, overlapped) + serial
    else:
        total = l_ops + sum(sum(r["cycles"] for r in l_mem[o]) for o in ops)
    return CostBreakdown(total=total, l_ops=l_ops, l_mem=l_mem,
                         composition=composition, macs=w.macs)


def schedule_digest(s: Schedule) -> str:
    """Innermost-first factor tokens with per-operand cut markers."""
    marks: dict[int, list[str]] = {}
    for o, cuts in sorted(s.cuts.items()):
        for j, cut in enumerate(cuts):
            suffix = "" if j == 0 else str(j + 1)
            marks.setdefault(cut, []).append(f"|{o}{suffix}")
    parts = []
    for i, (d, p) in enumerate(s.temporal):
        parts.extend(marks.get(i, []))
        parts.append(f"{DIM_NAMES[d]}{p}")
    parts.extend(marks.get(len(s.temporal), []))
    return " ".join(parts) if parts else "untiled"


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

def _order_crossover(a: tuple, b: tuple, rng: random.Random) -> tuple:
    n = len(a)
    if n < 2:
        return a
    i, j = sorted(rng.sample(range(n + 1), 2))
    head = list(a[i:j])
    remaining: dict = {}
    for f in a:
        remaining[f] = remaining.get(f, 0) + 1
    for f in head:
        remaining[f] -= 1
    fill = []
    for f in b:
        if remaining.get(f, 0) > 0:
            remaining[f] -= 1
            fill.append(f)
    return tuple(fill[:i]) + tuple(head) + tuple(fill[i:])


def _swap_mutation(g: tuple, rng: random.Random) -> tuple:
    n = len(g)
    if n < 2:
        return g
    i, j = rng.sample(range(n), 2)
    lst = list(g)
    lst[i], lst[j] = lst[j], lst[i]
    return tuple(lst)


def _canonical_seeds(factors: tuple[LoopFactor, ...], w: Workload) -> list[tuple]:
    """Heuristically good genomes: reductions innermost, then spatial dims."""
    reduction = set(w.reduction_dims())
    by_red = tuple(sorted(factors, key=lambda f: (f[0] not in reduction, f)))
    return [factors, tuple(reversed(factors)), by_red]


def search_best(w: Workload, module: ExecModule, mode: str = "exhaustive",
                limits: SearchLimits | None = None):
    """Best (Schedule, CostBreakdown) for the workload on the module, or None
    when no ordering allocates; deterministic for a fixed seed."""
    limits = limits or SearchLimits()
    factors = temporal_factors(w)

    def cost_of(ordering):
        s = allocate_levels(ordering, w, module)
        if s is None:
            return None
        return s, evaluate_schedule(s, w, module)

    count = ordering_count(factors)
    exhaust = (mode == "exhaustive" and count <= limits.max_orderings) \
        or count <= max(limits.population, 2)
    best = None  # (total, ordering, schedule, breakdown)
    if exhaust:
        for ordering in enumerate_orderings(factors):
            res = cost_of(ordering)
            if res is None:
                continue
            s, br = res
            key = (br.total, ordering)
            if best is None or key < (best[0], best[1]):
                best = (br.total, ordering, s, br)
        return (best[2], best[3]) if best else None

    rng = random.Random(limits.seed)
    seeds = _canonical_seeds(factors, w)
    population: list[tuple] = list(dict.fromkeys(seeds))
    while len(population) < limits.population:
        g = list(factors)
        rng.shuffle(g)
        population.append(tuple(g))

    cache: dict[tuple, object] = {}

    def fitness(genome):
        if genome not in cache:
            cache[genome] = cost_of(genome)
        res = cache[genome]
        return res[1].total if res else float("inf")

    for _ in range(limits.generations):
        ranked = sorted(population, key=lambda g: (fitness(g), g))
        nxt = ranked[:limits.elite]
        parents = ranked[:max(2, len(ranked) // 2)]
        while len(nxt) < limits.population:
            a = parents[rng.randrange(len(parents))]
            b = parents[rng.randrange(len(parents))]
            child = _order_crossover(a, b, rng)
            if rng.random() < limits.mutation:
                child = _swap_mutation(child, rng)
            nxt.append(child)
        population = nxt

    evaluated = [(fitness(g), g) for g in cache]
    evaluated.sort()
    for total, genome in evaluated:
        if total != float("inf"):
            s, br = cache[genome]
            return s, br
    return None
