"""Operator-chain matching against module pattern tables.

A pattern is an op sequence anchored at a compute op; an occurrence is a
straight-line chain where every intermediate value feeds exactly its
successor. Constraints are conjunctions of clauses over anchor features.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import Graph, Node, TensorSpec, channel_axis, _conv_attrs

ANCHOR_OPS = ("conv2d", "dense", "add", "avgpool2d", "maxpool2d")


@dataclass(frozen=True)
class Occurrence:
    pattern_name: str
    node_ids: tuple[str, ...]

    @property
    def anchor(self) -> str:
        return self.node_ids[0]


def anchor_features(chain: list[Node], g: Graph, specs: dict[str, TensorSpec]) -> dict:
    """Feature dict the constraint clauses are evaluated against."""
    anchor = chain[0]
    x = specs[anchor.inputs[0]]
    feats = {
        "op": anchor.op,
        "dtype": x.dtype,
        "layout": x.layout or "none",
        "batch": x.shape[0] if x.rank >= 2 else 1,
        "FX": 1, "FY": 1, "SX": 1, "SY": 1, "DX": 1, "DY": 1,
        "groups": 1, "depthwise": False, "group_kind": "none", "square": True,
        "C": 0, "K": 0,
    }
    if anchor.op == "conv2d":
        sy, sx, _, _, _, _, dy, dx, groups = _conv_attrs(anchor.attrs)
        c = x.shape[channel_axis(x.layout)]
        k = specs[anchor.id].shape[channel_axis(x.layout)]
        w = specs[anchor.inputs[1]]
        from .layouts import weight_axes
        axes = weight_axes(w.layout, g.custom_layouts)
        canon = [0, 0, 0, 0]
        for pos, axis in enumerate(axes):
            canon[axis] = w.shape[pos]
        _, _, fy, fx = canon
        dw = groups == c and groups == k
        feats.update(FX=fx, FY=fy, SX=sx, SY=sy, DX=dx, DY=dy, groups=groups,
                     depthwise=dw, square=(fx == fy), C=c, K=k,
                     group_kind="none" if groups == 1 else ("depthwise" if dw else "other"))
    elif anchor.op == "dense":
        w = specs[anchor.inputs[1]]
        feats.update(C=w.shape[1], K=w.shape[0])
    elif anchor.op == "add":
        ch = x.shape[channel_axis(x.layout)] if x.rank == 4 else x.shape[-1]
        feats.update(C=ch, K=ch)
    elif anchor.op in ("avgpool2d", "maxpool2d"):
        ky, kx = anchor.attrs.get("kernel", (1, 1))
        sy, sx = anchor.attrs.get("strides", (ky, kx))
        feats.update(FX=kx, FY=ky, SX=sx, SY=sy, square=(kx == ky),
                     C=x.shape[channel_axis(x.layout)], K=x.shape[channel_axis(x.layout)])
    return feats


def eval_clauses(clauses, feats: dict) -> bool:
    for field, oper, value in clauses:
        have = feats.get(field)
        if oper == "=":
            ok = have == value
        elif oper == "!=":
            ok = have != value
        elif oper == "in":
            ok = have in value
        elif oper == "<=":
            ok = have <= value
        else:
            raise ValueError(f"unknown constraint operator {oper!r}")
        if not ok:
            return False
    return True


def find_occurrences(g: Graph, specs: dict[str, TensorSpec], pattern) -> list[Occurrence]:
    """All chains matching pattern.ops (constraints not checked here)."""
    consumers: dict[str, list[Node]] = {}
    for n in g.nodes:
        for r in n.inputs:
            consumers.setdefault(r, []).append(n)
    out_refs = set(g.outputs)
    const_names = set(g.constants)

    found = []
    for node in g.nodes:
        if node.op != pattern.ops[0]:
            continue
        chain = [node]
        ok = True
        for want in pattern.ops[1:]:
            cur = chain[-1]
            users = consumers.get(cur.id, [])
            # the fused value may not escape the chain
            if len(users) != 1 or cur.id in out_refs:
                ok = False
                break
            nxt = users[0]
            if nxt.op != want or nxt.inputs[0] != cur.id:
                ok = False
                break
            if any(r not in const_names for r in nxt.inputs[1:]):
                ok = False
                break
            chain.append(nxt)
        if ok:
            found.append(Occurrence(pattern.name, tuple(n.id for n in chain)))
    return found
