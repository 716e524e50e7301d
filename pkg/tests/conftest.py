"""Shared test helpers: small random graph/workload generators and
independent oracles (brute-force schedule search with its own allocation
reimplementation, linear-index chunk walk)."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from mcumap.costmodel import COMPUTE_MODELS, TileShape, choose_spatial_adaptation, walk_chunks
from mcumap.fixtures import GraphBuilder
from mcumap.ir import NCHW
from mcumap.target import DIM_NAMES, ExecModule
from mcumap.workload import DIM_INDEX, Workload, scratch_bytes


# ---------------------------------------------------------------------------
# workload construction
# ---------------------------------------------------------------------------

def make_workload(kind: str, real_dims: tuple[int, ...], module: ExecModule,
                  strides=(1, 1), dilation=(1, 1), groups=1,
                  act_layout="NHWC", pattern: str | None = None) -> Workload:
    """Mirror of extract_workload's spatial adaptation for synthetic dims."""
    spatial = [1] * 6
    adapted = list(real_dims)
    for dim, unroll in module.spatial.unrolls.items():
        i = DIM_INDEX[dim]
        choice, value = choose_spatial_adaptation(real_dims[i], unroll)
        if choice == "keep":
            spatial[i] = value
        else:
            spatial[i] = unroll
            adapted[i] = value
    k, c, oy, ox, fy, fx = real_dims
    if kind == "conv":
        macs = k * oy * ox * (c // groups) * fy * fx
    elif kind == "dense":
        macs = k * c
    else:
        macs = k * oy * ox
    wl = {"conv": ("conv2d_requant", ("K", "FY", "FX", "C")),
          "dense": ("dense_requant", ("K", "C")),
          "add": ("add_requant", ("K", "C", "FY", "FX"))}[kind]
    if module.transforms.weight_layout is not None:
        canon = ("K", "C", "FY", "FX")
        worder = tuple(canon[a] for a in module.transforms.weight_layout_axes)
    else:
        worder = wl[1]
    return Workload(kind=kind, dims=tuple(adapted), real_dims=tuple(real_dims),
                    spatial=tuple(spatial), strides=strides, dilation=dilation,
                    groups=groups, tail=("requant",), pattern=pattern or wl[0],
                    act_layout=act_layout, weight_dim_order=worder, macs=macs)


def random_workload(rng: np.random.Generator, module: ExecModule,
                    max_factors: int = 8) -> Workload:
    """Random conv/dense workload whose temporal extents stay within a prime
    factor budget."""
    smalls = [1, 2, 3, 4, 5, 6, 8]
    kind = rng.choice(["conv", "conv", "conv", "dense"])
    budget = max_factors

    def pick(limit_to=None):
        nonlocal budget
        opts = [v for v in (limit_to or smalls)
                if len(_primes(v)) <= budget]
        v = int(rng.choice(opts if opts else [1]))
        budget -= len(_primes(v))
        return v

    u = module.spatial.unrolls
    if kind == "dense":
        k = u.get("K", 1) * pick()
        c = pick()
        dims = (k, c, 1, 1, 1, 1)
        return make_workload("dense", dims, module)
    fy = int(rng.choice([1, 3]))
    k = u.get("K", 1) * pick()
    c = pick()
    oy = u.get("OY", 1) * pick()
    ox = u.get("OX", 1) * pick()
    sy = int(rng.choice([1, 2]))
    return make_workload("conv", (k, c, oy, ox, fy, fy), module,
                         strides=(sy, sy), act_layout="NHWC")


def _primes(n: int) -> list[int]:
    out, d = [], 2
    while d * d <= n:
        while n % d == 0:
            out.append(d)
            n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


# ---------------------------------------------------------------------------
# independent schedule-search oracle (re-enumeration + fresh allocation)
# ---------------------------------------------------------------------------

def oracle_best_cost(w: Workload, module: ExecModule):
    """Minimum schedule cost by exhaustive permutation enumeration with an
    allocation and evaluation written independently of the dse module."""
    factors = []
    for i in range(6):
        for p in _primes(w.dims[i] // w.spatial[i]):
            factors.append((i, p))
    factors.sort()
    seen = set()
    best = None
    for perm in itertools.permutations(factors):
        if perm in seen:
            continue
        seen.add(perm)
        res = oracle_allocate(list(perm), w, module)
        if res is None:
            continue
        cost = oracle_evaluate(res, list(perm), w, module)
        key = (cost, perm)
        if best is None or key < best:
            best = key
    return best  # (cost, ordering) or None


def _op_shape(w: Workload, op: str, ext) -> tuple[int, ...]:
    """Operand tile extents in storage order, derived here from first
    principles (sliding window, per-group reduction, layout order)."""
    k, c, oy, ox, fy, fx = ext
    if w.kind == "add":
        return (oy, ox, k) if w.act_layout == "NHWC" else (k, oy, ox)
    if op == "I":
        if w.kind == "dense":
            return (c,)
        iy = (oy - 1) * w.strides[0] + (fy - 1) * w.dilation[0] + 1
        ix = (ox - 1) * w.strides[1] + (fx - 1) * w.dilation[1] + 1
        return (iy, ix, c) if w.act_layout == "NHWC" else (c, iy, ix)
    if op == "W":
        if w.kind == "dense":
            return (k, c)
        red = c if w.groups == 1 else max(1, c // w.groups)
        by = {"K": k, "C": red, "FY": fy, "FX": fx}
        return tuple(by[d] for d in w.weight_dim_order)
    if w.kind == "dense":
        return (k,)
    return (oy, ox, k) if w.act_layout == "NHWC" else (k, oy, ox)


def _op_bytes(w: Workload, op: str, ext) -> int:
    n = 1
    for e in _op_shape(w, op, ext):
        n *= e
    return n


def oracle_allocate(order: list, w: Workload, module: ExecModule):
    """Greedy lowest-non-full-level allocation, reimplemented from scratch:
    double-buffer room is reserved up front on asynchronous modules, with a
    single-buffered retry when capacity fails."""
    # full tensors must fit wherever they finally live
    chains = {op: module.levels_for(op) for op in w.operands}
    for op in w.operands:
        if _op_bytes(w, op, list(w.dims)) > chains[op][-1].size:
            return None
    top_names = {}
    for op in w.operands:
        top = chains[op][-1]
        if top.shared:
            top_names.setdefault(top.name, [top.size, 0])
            top_names[top.name][1] += _op_bytes(w, op, list(w.dims))
    for size, used in top_names.values():
        if used > size:
            return None
    if module.cost.composition == "async_max":
        state = _oracle_pass(order, w, module, 2)
        if state is not None:
            return state
    return _oracle_pass(order, w, module, 1)


def _oracle_pass(order: list, w: Workload, module: ExecModule, mult: int):
    ops = list(w.operands)
    chains = {op: module.levels_for(op) for op in ops}
    chain_names = {op: [l.name for l in chains[op]] for op in ops}
    relevant = {op: w.relevant(op) for op in ops}
    reserve = {}
    sc = scratch_bytes(w, module)
    if sc:
        reserve[chains["I"][0].name] = sc
    tiles = {op: list(w.spatial) for op in ops}
    cur_bytes = {op: _op_bytes(w, op, tiles[op]) for op in ops}
    level_of = {op: 0 for op in ops}
    state = {op: {"cuts": [], "mults": [], "snaps": []} for op in ops}

    def occupancy(level_name):
        total = 0
        per_op = {}
        for op in ops:
            names = chain_names[op]
            if level_name not in names:
                continue
            pos = names.index(level_name)
            top = pos == len(names) - 1
            if pos < level_of[op]:
                b = state[op]["snaps"][pos] * state[op]["mults"][pos]
            elif pos == level_of[op]:
                b = cur_bytes[op] * (1 if top else mult)
            else:
                b = 0
            per_op[op] = b
            total += b
        return total, per_op

    def level_ok(level):
        budget = level.size - reserve.get(level.name, 0)
        total, per_op = occupancy(level.name)
        if level.shared:
            return total <= budget
        return all(b <= budget for b in per_op.values())

    for op in ops:
        for level in chains[op][:-1]:
            if not level_ok(level):
                return None

    reduction = set(w.reduction_dims())
    n = len(order)
    for i, (dim, prime) in enumerate(order):
        for op in ops:
            if dim not in relevant[op]:
                continue
            while True:
                pos = level_of[op]
                level = chains[op][pos]
                before = cur_bytes[op]
                tiles[op][dim] *= prime
                cur_bytes[op] = _op_bytes(w, op, tiles[op])
                if pos == len(chains[op]) - 1:
                    break
                if level_ok(level):
                    break
                tiles[op][dim] //= prime
                cur_bytes[op] = before
                if op == "O" and not state["O"]["cuts"]:
                    if any(order[j][0] in reduction for j in range(i, n)):
                        return None
                state[op]["cuts"].append(i)
                state[op]["snaps"].append(before)
                state[op]["mults"].append(mult)
                level_of[op] = pos + 1
    for op in ops:
        while len(state[op]["cuts"]) < len(chains[op]) - 1:
            state[op]["cuts"].append(n)
            state[op]["mults"].append(1)
            state[op]["snaps"].append(_op_bytes(w, op, tiles[op]))
    for op in ops:
        tiled = state[op]["cuts"] and state[op]["cuts"][0] < n
        state[op]["buffering"] = "double" if (mult == 2 and tiled) else "single"
    return state


def _chunks_by_row_walk(tile, full) -> int:
    """Maximal contiguous runs of a tile box, counted by walking row start
    addresses in the parent's linear index space."""
    import itertools
    if len(tile) == 0:
        return 1
    strides = [1] * len(full)
    for i in range(len(full) - 2, -1, -1):
        strides[i] = strides[i + 1] * full[i + 1]
    row = tile[-1]
    runs = 0
    prev_end = None
    for idx in itertools.product(*(range(t) for t in tile[:-1])):
        base = sum(i * s for i, s in zip(idx, strides[:-1]))
        if prev_end is None or base != prev_end:
            runs += 1
        prev_end = base + row
    return max(runs, 1)


def oracle_evaluate(state, order, w: Workload, module: ExecModule) -> int:
    ops = list(w.operands)
    n = len(order)
    kernel_cut = min(state[op]["cuts"][0] if state[op]["cuts"] else n for op in ops)
    epochs = 1
    for j in range(kernel_cut, n):
        epochs *= order[j][1]
    ext = list(w.spatial)
    for j in range(kernel_cut):
        ext[order[j][0]] *= order[j][1]
    tile = TileShape(k=ext[0], c=w.reduction_channels(ext[1]), oy=ext[2],
                     ox=ext[3], fy=ext[4], fx=ext[5])
    unrolls = {DIM_NAMES[i]: u for i, u in enumerate(w.spatial) if u > 1}
    l_ops = epochs * COMPUTE_MODELS[module.cost.model]([tile], module.cost.constants,
                                                       unrolls)
    mem = {}
    one_shot = {}
    for op in ops:
        chain = module.levels_for(op)
        cycles = 0
        one_shot[op] = True
        for b in range(len(chain) - 1):
            cut = state[op]["cuts"][b]
            xfers = 1
            for j in range(cut, n):
                xfers *= order[j][1]
            if xfers != 1:
                one_shot[op] = False
            text = list(w.spatial)
            for j in range(cut):
                if order[j][0] in w.relevant(op):
                    text[order[j][0]] *= order[j][1]
            parent_cut = state[op]["cuts"][b + 1] if b + 1 < len(chain) - 1 else n
            pext = list(w.spatial)
            for j in range(parent_cut):
                if order[j][0] in w.relevant(op):
                    pext[order[j][0]] *= order[j][1]
            chunks = _chunks_by_row_walk(_op_shape(w, op, text), _op_shape(w, op, pext))
            bts = _op_bytes(w, op, text)
            level = chain[b + 1]
            per = -(-bts // level.bandwidth) + chunks * level.chunk_overhead
            cycles += xfers * per
        mem[op] = cycles
    if module.cost.composition == "async_max":
        over = sum(mem[op] for op in ops
                   if state[op]["buffering"] == "double" or one_shot[op])
        sgl = sum(mem[op] for op in ops
                  if not (state[op]["buffering"] == "double" or one_shot[op]))
        return max(l_ops, over) + sgl
    return l_ops + sum(mem.values())


# ---------------------------------------------------------------------------
# small random graphs for pass-preservation properties
# ---------------------------------------------------------------------------

def random_small_graph(seed: int):
    """Short op chains with occasional skip-adds, pools and folded constants."""
    rng = np.random.default_rng(seed)
    b = GraphBuilder(f"g{seed}", seed + 5000)
    c = int(rng.choice([2, 3, 4, 8]))
    h = int(rng.choice([6, 8, 10]))
    x = b.input("x", (1, c, h, h), NCHW)
    t = x
    skip = None
    for step in range(int(rng.integers(1, 4))):
        choice = rng.choice(["conv", "dwconv", "pool", "relu", "addskip"])
        cur_c = b.specs[t].shape[1]
        if choice == "conv":
            k = int(rng.choice([2, 4, 8]))
            t = b.requant(b.conv(t, k, 3, 3, (1, 1), (1, 1, 1, 1)),
                          per_channel=bool(rng.random() < 0.5))
        elif choice == "dwconv":
            t = b.requant(b.conv(t, cur_c, 3, 3, (1, 1), (1, 1, 1, 1), groups=cur_c))
        elif choice == "pool":
            hh = b.specs[t].shape[2]
            if hh >= 4:
                op = "avgpool2d" if rng.random() < 0.5 else "maxpool2d"
                t = b.node(b._uid("pool"), op,
                           {"kernel": (2, 2), "strides": (2, 2), "padding": (0, 0, 0, 0)},
                           [t])
        elif choice == "relu":
            t = b.node(b._uid("relu"), "relu", {}, [t])
        elif choice == "addskip" and skip is not None \
                and b.specs[skip].shape == b.specs[t].shape:
            t = b.requant(b.add(t, skip), per_channel=False)
        skip = t
    # dead branch + foldable constant subgraph
    cst = b.const(b._uid("cst"), rng.integers(-10, 10, (4,)), "i32")
    b.node(b._uid("dead"), "mul", {}, [cst, cst])
    b.output(t)
    return b.finish()


@pytest.fixture(scope="session")
def resnet8():
    from mcumap.fixtures import build_resnet8
    return build_resnet8()
