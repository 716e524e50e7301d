"""Graph-to-graph transformation passes.

Hardware-agnostic: constant folding + dead-node elimination, and the
mul/add/div/clip/cast -> requant rewrite (gated on provable floor/trunc
equivalence unless strict mode is disabled). Hardware-aware: activation
layout switching and per-module padding / custom weight storage.
"""

from __future__ import annotations

import numpy as np

from .ir import (
    DTYPE_RANGE, I8, NCHW, NHWC, ConfigError, Graph, Node, TensorSpec,
    channel_axis, clone_graph, value_specs,
)
from .interp import eval_node
from .layouts import (
    activation_shape, default_weight_layout, transpose_activation,
    weight_from_oihw, weight_to_oihw,
)
from .patterns import anchor_features, eval_clauses, find_occurrences


def _referenced(nodes, outputs) -> set[str]:
    needed = set(outputs)
    for node in reversed(nodes):
        if node.id in needed:
            needed.update(node.inputs)
    return needed


def fold_constants_and_dce(g: Graph) -> Graph:
    """Evaluate all-constant nodes into constants; drop nodes unreachable
    from the outputs. Idempotent, semantics-preserving."""
    specs = value_specs(g)
    constants = {k: (s, d.copy()) for k, (s, d) in g.constants.items()}
    const_vals = {k: d.reshape(s.shape) for k, (s, d) in g.constants.items()}
    nodes: list[Node] = []
    for node in g.nodes:
        if all(r in const_vals for r in node.inputs) and node.id in specs:
            val = eval_node(node, [const_vals[r] for r in node.inputs],
                            [specs[r] for r in node.inputs], g.custom_layouts)
            const_vals[node.id] = val
            constants[node.id] = (specs[node.id], np.asarray(val).reshape(-1))
        else:
            nodes.append(node)
    needed = _referenced(nodes, g.outputs)
    nodes = [n for n in nodes if n.id in needed]
    needed = _referenced(nodes, g.outputs)
    constants = {k: v for k, v in constants.items() if k in needed}
    return Graph(g.name, list(g.inputs), constants, nodes, list(g.outputs),
                 dict(g.custom_layouts))


# ---------------------------------------------------------------------------
# requant rewrite
# ---------------------------------------------------------------------------

def _value_bounds(name: str, g: Graph, specs) -> tuple[int, int]:
    """Conservative value interval of a graph value (one producer step deep)."""
    if name in g.constants:
        data = g.constants[name][1]
        return (int(data.min()), int(data.max())) if data.size else (0, 0)
    spec = specs[name]
    lo, hi = DTYPE_RANGE[spec.dtype]
    producer = next((n for n in g.nodes if n.id == name), None)
    if producer is None:
        return lo, hi
    if producer.op == "relu":
        return (0, hi)
    if producer.op == "clip":
        return (max(lo, producer.attrs["min"]), min(hi, producer.attrs["max"]))
    if producer.op in ("requant", "cast") and specs[name].dtype == I8:
        return (-128, 127)
    return lo, hi


def _scalar_or_list(data: np.ndarray):
    flat = data.reshape(-1)
    if flat.size == 1:
        return int(flat[0])
    return [int(v) for v in flat]


def rewrite_requant(g: Graph, strict: bool = True) -> Graph:
    """Fuse mul(x,M) -> add(.,B) -> div(.,D) -> clip(-128,127) -> cast(i8)
    into one requant node when D is a power of two 2^S.

    div truncates toward zero while the requant shift floors, so in strict
    mode the rewrite only fires when (x*M + B) is provably non-negative.
    """
    specs = value_specs(g)
    consumers: dict[str, list[Node]] = {}
    for n in g.nodes:
        for r in n.inputs:
            consumers.setdefault(r, []).append(n)
    out_refs = set(g.outputs)

    def sole_consumer(name: str) -> Node | None:
        users = consumers.get(name, [])
        if len(users) == 1 and name not in out_refs:
            return users[0]
        return None

    replaced: dict[str, Node] = {}   # cast id -> requant node
    dropped: set[str] = set()
    for m in g.nodes:
        if m.op != "mul" or len(m.inputs) != 2 or m.inputs[1] not in g.constants or m.id in dropped:
            continue
        a = sole_consumer(m.id)
        if a is None or a.op != "add" or a.inputs[0] != m.id or a.inputs[1] not in g.constants:
            continue
        d = sole_consumer(a.id)
        if d is None or d.op != "div" or d.inputs[0] != a.id or d.inputs[1] not in g.constants:
            continue
        c = sole_consumer(d.id)
        if c is None or c.op != "clip" or c.attrs.get("min") != -128 or c.attrs.get("max") != 127:
            continue
        t = sole_consumer(c.id)
        if t is None or t.op != "cast" or t.attrs.get("dtype") != I8:
            continue
        divisor = g.constants[d.inputs[1]][1].reshape(-1)
        if divisor.size == 0 or np.any(divisor != divisor[0]) or divisor[0] <= 0:
            continue
        dv = int(divisor[0])
        if dv & (dv - 1):
            continue  # not a power of two: stays on the fallback path
        shift = dv.bit_length() - 1
        if not 0 <= shift <= 31:
            continue
        mvals = g.constants[m.inputs[1]][1].reshape(-1).astype(np.int64)
        bvals = g.constants[a.inputs[1]][1].reshape(-1).astype(np.int64)
        if strict:
            lo, hi = _value_bounds(m.inputs[0], g, specs)
            worst = np.minimum(lo * mvals, hi * mvals)
            floor = worst + (bvals if bvals.size in (1, worst.size) else bvals.min())
            if floor.min() < 0:
                continue  # trunc(-x/2^S) != (-x) >> S: keep the explicit chain
        rq = Node(
            id=t.id, op="requant",
            attrs={"M": _scalar_or_list(g.constants[m.inputs[1]][1]),
                   "B": _scalar_or_list(g.constants[a.inputs[1]][1]),
                   "S": shift},
            inputs=(m.inputs[0],),
        )
        replaced[t.id] = rq
        dropped.update((m.id, a.id, d.id, c.id))

    if not replaced:
        return clone_graph(g)
    nodes = []
    for node in g.nodes:
        if node.id in dropped:
            continue
        nodes.append(replaced.get(node.id, node))
    out = Graph(g.name, list(g.inputs),
                {k: (s, d.copy()) for k, (s, d) in g.constants.items()},
                nodes, list(g.outputs), dict(g.custom_layouts))
    return fold_constants_and_dce(out)  # drop now-unreferenced M/B/D constants


# ---------------------------------------------------------------------------
# layout transform
# ---------------------------------------------------------------------------

def _weight_constant_names(g: Graph) -> set[str]:
    names = set()
    for n in g.nodes:
        if n.op == "conv2d" and len(n.inputs) == 2 and n.inputs[1] in g.constants:
            names.add(n.inputs[1])
    return names


def transform_layout(g: Graph, target_layout: str) -> Graph:
    """Move every 4-D activation (and matching conv weights) to
    `target_layout`; element semantics are preserved in canonical index
    space. Idempotent."""
    assert target_layout in (NCHW, NHWC)
    specs = value_specs(g)
    current = {s.layout for s in specs.values() if s.rank == 4 and s.layout in (NCHW, NHWC)}
    if not current or current == {target_layout}:
        return clone_graph(g)
    if len(current) > 1:
        raise ConfigError(f"graph {g.name}: mixed activation layouts {sorted(current)}")
    src = current.pop()

    # reshape-like ops are only order-invariant when the spatial dims are
    # degenerate; anything else would need an explicit transpose
    for n in g.nodes:
        x = specs.get(n.inputs[0]) if n.inputs else None
        if n.op in ("flatten", "reshape", "dense") and x is not None and x.rank == 4:
            ax = {c: i for i, c in enumerate(x.layout)}
            if x.shape[ax["H"]] != 1 or x.shape[ax["W"]] != 1:
                raise ConfigError(
                    f"node {n.id}: {n.op} on a 4-D activation with non-unit "
                    "spatial dims cannot survive a layout switch")
        if n.op == "reshape" and len(n.attrs.get("shape", ())) == 4:
            raise ConfigError(f"node {n.id}: reshape to 4-D under layout switch")

    weight_names = _weight_constant_names(g)
    w_target = default_weight_layout(target_layout)
    inputs = [TensorSpec(t.name, activation_shape(t.shape, src, target_layout),
                         t.dtype, target_layout if t.rank == 4 else t.layout)
              for t in g.inputs]
    constants = {}
    for name, (spec, data) in g.constants.items():
        if name in weight_names:
            canon = weight_to_oihw(data.reshape(spec.shape), spec.layout, g.custom_layouts)
            stored = weight_from_oihw(canon, w_target, {})
            constants[name] = (TensorSpec(name, stored.shape, spec.dtype, w_target),
                               stored.reshape(-1).copy())
        elif spec.rank == 4:
            arr = transpose_activation(data.reshape(spec.shape), src, target_layout)
            constants[name] = (TensorSpec(name, arr.shape, spec.dtype, target_layout),
                               arr.reshape(-1).copy())
        else:
            constants[name] = (spec, data.copy())
    nodes = []
    for n in g.nodes:
        if n.op == "pad" and specs[n.inputs[0]].rank == 4:
            perm = (0, 2, 3, 1) if target_layout == NHWC else (0, 3, 1, 2)
            pads = n.attrs["pads"]
            nodes.append(Node(n.id, n.op, {**n.attrs, "pads": tuple(pads[p] for p in perm)}, n.inputs))
        elif n.op == "slice" and specs[n.inputs[0]].rank == 4:
            perm = (0, 2, 3, 1) if target_layout == NHWC else (0, 3, 1, 2)
            nodes.append(Node(n.id, n.op, {
                **n.attrs,
                "begin": tuple(n.attrs["begin"][p] for p in perm),
                "end": tuple(n.attrs["end"][p] for p in perm)}, n.inputs))
        else:
            nodes.append(n)
    return Graph(g.name, inputs, constants, nodes, list(g.outputs), dict(g.custom_layouts))


# ---------------------------------------------------------------------------
# module transforms: alignment padding and custom weight storage
# ---------------------------------------------------------------------------

def _matched_chains(g: Graph, module) -> list[tuple[str, tuple[str, ...]]]:
    """Constraint-checked occurrences of the module's patterns, longest
    match kept per anchor."""
    specs = value_specs(g)
    nodes_by_id = g.node_map()
    best: dict[str, tuple[str, tuple[str, ...]]] = {}
    for pattern in module.patterns:
        for occ in find_occurrences(g, specs, pattern):
            chain = [nodes_by_id[i] for i in occ.node_ids]
            feats = anchor_features(chain, g, specs)
            if not eval_clauses(pattern.where, feats):
                continue
            cur = best.get(occ.anchor)
            if cur is None or len(occ.node_ids) > len(cur[1]):
                best[occ.anchor] = (pattern.name, occ.node_ids)
    return [best[a] for a in sorted(best)]


def _pad_axis(data: np.ndarray, axis: int, target: int) -> np.ndarray:
    pads = [(0, 0)] * data.ndim
    pads[axis] = (0, target - data.shape[axis])
    return np.pad(data, pads, constant_values=0)


def apply_module_padding(g: Graph, module) -> Graph:
    """Zero-pad hard-aligned dimensions (declared per anchor op) of every
    chain the module could execute, slicing the original extents back out
    after the chain tail."""
    if not module.transforms.padding:
        return clone_graph(g)
    g = clone_graph(g)
    for pattern_name, node_ids in _matched_chains(g, module):
        specs = value_specs(g)
        nodes_by_id = g.node_map()
        anchor = nodes_by_id[node_ids[0]]
        multiples = module.transforms.padding.get(anchor.op)
        if multiples is None or anchor.inputs[1] not in g.constants:
            continue
        out_spec = specs[node_ids[-1]]
        ch_ax = channel_axis(out_spec.layout) if out_spec.rank == 4 else out_spec.rank - 1
        k_real = out_spec.shape[ch_ax]
        pad_k = multiples.get("K")
        if anchor.op == "conv2d" and anchor.attrs.get("groups", 1) != 1:
            # padding K alone would remap the groups; grouped convolutions run
            # with partial array utilization instead
            pad_k = None
        pad_ox = multiples.get("OX") if anchor.op == "conv2d" else None
        k_target = -(-k_real // pad_k) * pad_k if pad_k and k_real % pad_k else k_real
        ox_target = ox_real = None
        if pad_ox and out_spec.rank == 4:
            w_ax = {c: i for i, c in enumerate(out_spec.layout)}["W"]
            ox_real = out_spec.shape[w_ax]
            if ox_real % pad_ox:
                ox_target = -(-ox_real // pad_ox) * pad_ox
        if k_target == k_real and ox_target is None:
            continue

        if k_target != k_real:
            wname = anchor.inputs[1]
            wspec, wdata = g.constants[wname]
            from .layouts import weight_dims
            if anchor.op == "conv2d":
                k_axis = weight_dims(wspec.layout, g.custom_layouts).index("K")
            else:
                k_axis = 0
            padded = _pad_axis(wdata.reshape(wspec.shape), k_axis, k_target)
            new_wname = f"{wname}__k{k_target}"
            g.constants[new_wname] = (
                TensorSpec(new_wname, padded.shape, wspec.dtype, wspec.layout),
                padded.reshape(-1))
            replace_input(g, anchor.id, wname, new_wname)
            for nid in node_ids[1:]:
                tail = g.node_map()[nid]
                if tail.op == "bias_add":
                    bname = tail.inputs[1]
                    bspec, bdata = g.constants[bname]
                    bpad = _pad_axis(bdata.reshape(bspec.shape), 0, k_target)
                    new_bname = f"{bname}__k{k_target}"
                    g.constants[new_bname] = (
                        TensorSpec(new_bname, bpad.shape, bspec.dtype, None),
                        bpad.reshape(-1))
                    replace_input(g, tail.id, bname, new_bname)
                elif tail.op == "requant":
                    attrs = dict(tail.attrs)
                    for key, fill in (("M", 1), ("B", 0)):
                        if isinstance(attrs[key], list):
                            attrs[key] = attrs[key] + [fill] * (k_target - k_real)
                    set_node(g, Node(tail.id, tail.op, attrs, tail.inputs))

        if ox_target is not None:
            from .ir import _conv_attrs
            sy, sx, pt, pl, pb, pr, dy, dx, groups = _conv_attrs(anchor.attrs)
            x_spec = specs[anchor.inputs[0]]
            ix = x_spec.shape[{c: i for i, c in enumerate(x_spec.layout)}["W"]]
            w_spec = specs[anchor.inputs[1]]
            from .layouts import weight_dims as _wd
            fx = w_spec.shape[_wd(w_spec.layout, g.custom_layouts).index("FX")]
            needed = (ox_target - 1) * sx + (fx - 1) * dx + 1
            pr = max(pr, needed - ix - pl)
            a = g.node_map()[anchor.id]
            set_node(g, Node(a.id, a.op, {**a.attrs, "padding": (pt, pl, pb, pr)}, a.inputs))

        # rename the tail, slice the padded extents back out under its name
        tail_id = node_ids[-1]
        padded_spec = value_specs(g)[tail_id]
        begin = [0] * padded_spec.rank
        end = list(padded_spec.shape)
        if k_target != k_real:
            end[ch_ax] = k_real
        if ox_target is not None:
            end[{c: i for i, c in enumerate(padded_spec.layout)}["W"]] = ox_real
        # the slice takes over the tail's name so downstream references and
        # graph outputs keep resolving to the un-padded extents
        inner_id = f"{tail_id}__padded"
        idx = next(i for i, n in enumerate(g.nodes) if n.id == tail_id)
        tail = g.nodes[idx]
        g.nodes[idx] = Node(inner_id, tail.op, tail.attrs, tail.inputs)
        g.nodes.insert(idx + 1, Node(tail_id, "slice",
                                     {"begin": tuple(begin), "end": tuple(end)},
                                     (inner_id,)))
    return g


def replace_input(g: Graph, node_id: str, old: str, new: str) -> None:
    for i, n in enumerate(g.nodes):
        if n.id == node_id:
            g.nodes[i] = Node(n.id, n.op, n.attrs,
                              tuple(new if r == old else r for r in n.inputs))
            return


def set_node(g: Graph, node: Node) -> None:
    for i, n in enumerate(g.nodes):
        if n.id == node.id:
            g.nodes[i] = node
            return


def apply_module_weight_layout(g: Graph, module, node_ids=None) -> Graph:
    """Re-block conv weights into the module's custom storage layout at
    compile time (payload permutation; no runtime cost)."""
    tr = module.transforms
    if tr.weight_layout is None:
        return clone_graph(g)
    g = clone_graph(g)
    g.custom_layouts[tr.weight_layout] = list(tr.weight_layout_axes)
    wanted = set(node_ids) if node_ids is not None else None
    targets = []
    if wanted is None:
        targets = [chain[1][0] for chain in _matched_chains(g, module)]
    else:
        targets = [n.id for n in g.nodes if n.id in wanted]
    for nid in targets:
        node = g.node_map().get(nid)
        if node is None or node.op != "conv2d" or node.inputs[1] not in g.constants:
            continue
        wname = node.inputs[1]
        wspec, wdata = g.constants[wname]
        if wspec.layout == tr.weight_layout:
            continue
        canon = weight_to_oihw(wdata.reshape(wspec.shape), wspec.layout, g.custom_layouts)
        stored = weight_from_oihw(canon, tr.weight_layout, g.custom_layouts)
        if len(g.consumers(wname)) > 1:
            new_name = f"{wname}__{tr.weight_layout}"
            g.constants[new_name] = (
                TensorSpec(new_name, stored.shape, wspec.dtype, tr.weight_layout),
                stored.reshape(-1).copy())
            replace_input(g, nid, wname, new_name)
        else:
            g.constants[wname] = (
                TensorSpec(wname, stored.shape, wspec.dtype, tr.weight_layout),
                stored.reshape(-1).copy())
    return g


def apply_module_transforms(g: Graph, module) -> Graph:
    """Alignment padding plus custom weight storage for one module."""
    return apply_module_weight_layout(apply_module_padding(g, module), module)
