"""Integer DNN graph representation: tensors, nodes, JSON (de)serialization,
shape/dtype inference and structural validation.

All tensors are signed two's-complement integers, either 8-bit ("i8") or
32-bit ("i32"). Activations are 4-D (NCHW or NHWC), weights 4-D/2-D, scale
vectors 1-D. Constant payloads are stored inline as flat integer arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

I8 = "i8"
I32 = "i32"
DTYPES = (I8, I32)
DTYPE_SIZE = {I8: 1, I32: 4}
DTYPE_RANGE = {I8: (-128, 127), I32: (-(2**31), 2**31 - 1)}

NCHW = "NCHW"
NHWC = "NHWC"
OIHW = "OIHW"
OHWI = "OHWI"
ACTIVATION_LAYOUTS = (NCHW, NHWC)
WEIGHT_LAYOUTS = (OIHW, OHWI)

OPS = (
    "conv2d", "dense", "add", "mul", "bias_add", "relu", "clip", "cast",
    "right_shift", "div", "avgpool2d", "maxpool2d", "requant", "reshape",
    "flatten", "pad", "slice",
)


class CompileError(Exception):
    """Base class for user-facing failures."""


class GraphParseError(CompileError):
    pass


class GraphSchemaError(CompileError):
    pass


class GraphStructureError(CompileError):
    pass


class ConfigError(CompileError):
    pass


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: tuple[int, ...]
    dtype: str
    layout: str | None = None  # 4-D activations / weights only

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def nbytes(self) -> int:
        return self.size * DTYPE_SIZE[self.dtype]


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    attrs: dict
    inputs: tuple[str, ...]


@dataclass
class Graph:
    name: str
    inputs: list[TensorSpec]
    constants: dict[str, tuple[TensorSpec, np.ndarray]]
    nodes: list[Node]
    outputs: list[str]
    # custom weight layouts introduced by module transforms: name -> base
    # layout the payload permutation was derived from
    custom_layouts: dict[str, str] = field(default_factory=dict)

    def input_names(self) -> list[str]:
        return [t.name for t in self.inputs]

    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def producers(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def consumers(self, name: str) -> list[Node]:
        return [n for n in self.nodes if name in n.inputs]


def normalize_ref(ref: str) -> str:
    """Accept "id" or "id:k"; every op has a single output so k must be 0."""
    if ":" in ref:
        base, _, idx = ref.partition(":")
        if idx != "0":
            raise GraphStructureError(f"multi-output reference {ref!r}: only output 0 exists")
        return base
    return ref


# ---------------------------------------------------------------------------
# Shape / dtype inference
# ---------------------------------------------------------------------------

def _axes(layout: str) -> dict[str, int]:
    return {c: i for i, c in enumerate(layout)}


def channel_axis(layout: str) -> int:
    return _axes(layout)["C"]


def conv_out_extent(inp: int, pad_lo: int, pad_hi: int, flt: int, stride: int, dil: int) -> int:
    return (inp + pad_lo + pad_hi - dil * (flt - 1) - 1) // stride + 1


def _conv_attrs(attrs: dict) -> tuple:
    sy, sx = attrs.get("strides", (1, 1))
    pt, pl, pb, pr = attrs.get("padding", (0, 0, 0, 0))
    dy, dx = attrs.get("dilation", (1, 1))
    groups = attrs.get("groups", 1)
    return sy, sx, pt, pl, pb, pr, dy, dx, groups


def infer_node_spec(node: Node, in_specs: list[TensorSpec], diags: list[str],
                    custom_layouts: dict | None = None) -> TensorSpec | None:
    """Output TensorSpec of `node`, appending diagnostics on rule violations.

    Returns None when the output cannot be inferred (errors were recorded).
    """

    def bad(msg: str):
        diags.append(f"node {node.id}: {msg}")
        return None

    op = node.op
    if op not in OPS:
        return bad(f"unknown op {op!r}")
    x = in_specs[0] if in_specs else None

    if op == "conv2d":
        if len(in_specs) != 2:
            return bad("conv2d expects (input, weights)")
        w = in_specs[1]
        if x.rank != 4 or w.rank != 4:
            return bad("conv2d operands must be 4-D")
        if x.dtype != I8 or w.dtype != I8:
            return bad("conv2d operands must be i8")
        sy, sx, pt, pl, pb, pr, dy, dx, groups = _conv_attrs(node.attrs)
        ax = _axes(x.layout or NCHW)
        n, c, iy, ix = (x.shape[ax[a]] for a in "NCHW")
        from .layouts import weight_axes
        try:
            axes = weight_axes(w.layout, custom_layouts or {})
        except KeyError:
            return bad(f"conv2d weight layout {w.layout!r} not inferable")
        canon = [0, 0, 0, 0]
        for pos, axis in enumerate(axes):
            canon[axis] = w.shape[pos]
        k, cg, fy, fx = canon
        if groups < 1 or c % groups or k % groups:
            return bad("groups must divide channels")
        if cg != c // groups:
            return bad(f"weight channel extent {cg} != C/groups {c // groups}")
        oy = conv_out_extent(iy, pt, pb, fy, sy, dy)
        ox = conv_out_extent(ix, pl, pr, fx, sx, dx)
        if oy < 1 or ox < 1:
            return bad("empty output window")
        shp = dict(N=n, C=k, H=oy, W=ox)
        shape = tuple(shp[a] for a in (x.layout or NCHW))
        return TensorSpec(node.id, shape, I32, x.layout)

    if op == "dense":
        if len(in_specs) != 2:
            return bad("dense expects (input, weights)")
        w = in_specs[1]
        if w.rank != 2:
            return bad("dense weights must be 2-D (K, C)")
        if x.dtype != I8 or w.dtype != I8:
            return bad("dense operands must be i8")
        n = x.shape[0]
        feat = x.size // n
        if feat != w.shape[1]:
            return bad(f"dense input features {feat} != weight columns {w.shape[1]}")
        return TensorSpec(node.id, (n, w.shape[0]), I32, None)

    if op in ("add", "mul"):
        if len(in_specs) != 2:
            return bad(f"{op} expects two operands")
        a, b = in_specs
        if a.shape != b.shape:
            # allow a per-channel vector on the right
            if not (b.rank == 1 and a.rank >= 2 and b.shape[0] == a.shape[channel_axis(a.layout or NCHW) if a.rank == 4 else 1]):
                return bad(f"operand shapes {a.shape} and {b.shape} incompatible")
        # sums/products of i8 values exceed the i8 range; both ops widen
        return TensorSpec(node.id, a.shape, I32, a.layout)

    if op == "bias_add":
        if len(in_specs) != 2:
            return bad("bias_add expects (input, bias)")
        b = in_specs[1]
        ch = x.shape[channel_axis(x.layout or NCHW)] if x.rank == 4 else x.shape[-1]
        if b.rank != 1 or b.shape[0] != ch:
            return bad(f"bias length {b.shape} != channels {ch}")
        return TensorSpec(node.id, x.shape, I32, x.layout)

    if op in ("relu", "right_shift"):
        return TensorSpec(node.id, x.shape, x.dtype, x.layout)

    if op == "clip":
        if "min" not in node.attrs or "max" not in node.attrs:
            return bad("clip requires min/max attrs")
        return TensorSpec(node.id, x.shape, x.dtype, x.layout)

    if op == "cast":
        dt = node.attrs.get("dtype")
        if dt not in DTYPES:
            return bad(f"cast dtype {dt!r} invalid")
        return TensorSpec(node.id, x.shape, dt, x.layout)

    if op == "div":
        if len(in_specs) != 2:
            return bad("div expects (input, divisor)")
        return TensorSpec(node.id, x.shape, x.dtype, x.layout)

    if op in ("avgpool2d", "maxpool2d"):
        if x.rank != 4:
            return bad("pooling input must be 4-D")
        ky, kx = node.attrs.get("kernel", (1, 1))
        sy, sx = node.attrs.get("strides", (ky, kx))
        pt, pl, pb, pr = node.attrs.get("padding", (0, 0, 0, 0))
        ax = _axes(x.layout or NCHW)
        n, c, iy, ix = (x.shape[ax[a]] for a in "NCHW")
        oy = conv_out_extent(iy, pt, pb, ky, sy, 1)
        ox = conv_out_extent(ix, pl, pr, kx, sx, 1)
        if oy < 1 or ox < 1:
            return bad("empty pooling window")
        shp = dict(N=n, C=c, H=oy, W=ox)
        shape = tuple(shp[a] for a in x.layout)
        return TensorSpec(node.id, shape, x.dtype, x.layout)

    if op == "requant":
        s = node.attrs.get("S")
        if not isinstance(s, int) or not 0 <= s <= 31:
            return bad("requant shift S must be an int in [0, 31]")
        for key in ("M", "B"):
            if key not in node.attrs:
                return bad(f"requant missing {key}")
            v = node.attrs[key]
            ch = x.shape[channel_axis(x.layout)] if x.rank == 4 else x.shape[-1]
            if isinstance(v, list) and len(v) != ch:
                return bad(f"requant {key} has {len(v)} entries for {ch} channels")
        return TensorSpec(node.id, x.shape, I8, x.layout)

    if op == "reshape":
        shape = tuple(node.attrs.get("shape", ()))
        if not shape:
            return bad("reshape requires shape attr")
        n = 1
        for d in shape:
            n *= d
        if n != x.size:
            return bad(f"reshape to {shape} changes element count")
        return TensorSpec(node.id, shape, x.dtype, None if len(shape) != 4 else x.layout)

    if op == "flatten":
        return TensorSpec(node.id, (x.shape[0], x.size // x.shape[0]), x.dtype, None)

    if op == "pad":
        pads = node.attrs.get("pads")
        if not pads or len(pads) != x.rank:
            return bad("pad requires per-dimension (lo, hi) pairs")
        shape = tuple(d + lo + hi for d, (lo, hi) in zip(x.shape, pads))
        return TensorSpec(node.id, shape, x.dtype, x.layout)

    if op == "slice":
        begin = node.attrs.get("begin")
        end = node.attrs.get("end")
        if not begin or not end or len(begin) != x.rank or len(end) != x.rank:
            return bad("slice requires full-rank begin/end")
        for b, e, d in zip(begin, end, x.shape):
            if not (0 <= b < e <= d):
                return bad(f"slice bounds [{b}, {e}) outside extent {d}")
        shape = tuple(e - b for b, e in zip(begin, end))
        return TensorSpec(node.id, shape, x.dtype, x.layout)

    return bad(f"unhandled op {op!r}")


def value_specs(g: Graph) -> dict[str, TensorSpec]:
    """TensorSpec for every value (inputs, constants, node outputs)."""
    specs: dict[str, TensorSpec] = {t.name: t for t in g.inputs}
    for name, (spec, _) in g.constants.items():
        specs[name] = spec
    diags: list[str] = []
    for node in g.nodes:
        in_specs = [specs[r] for r in node.inputs if r in specs]
        if len(in_specs) != len(node.inputs):
            continue
        out = infer_node_spec(node, in_specs, diags, g.custom_layouts)
        if out is not None:
            specs[node.id] = out
    return specs


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_graph(g: Graph) -> list[str]:
    """Structural and per-node diagnostics; empty list means the graph is valid."""
    diags: list[str] = []
    defined: set[str] = set()
    for t in g.inputs:
        if t.name in defined:
            diags.append(f"duplicate value name {t.name!r}")
        defined.add(t.name)
        if t.dtype not in DTYPES:
            diags.append(f"input {t.name}: bad dtype {t.dtype!r}")
        if t.rank not in (1, 2, 4):
            diags.append(f"input {t.name}: rank {t.rank} not in (1, 2, 4)")
        if any(d < 1 for d in t.shape):
            diags.append(f"input {t.name}: non-positive extent in {t.shape}")
        if t.rank == 4 and t.layout not in ACTIVATION_LAYOUTS:
            diags.append(f"input {t.name}: 4-D activations need NCHW/NHWC layout")
    for name, (spec, data) in g.constants.items():
        if name in defined:
            diags.append(f"duplicate value name {name!r}")
        defined.add(name)
        if spec.dtype not in DTYPES:
            diags.append(f"constant {name}: bad dtype {spec.dtype!r}")
        if data.size != spec.size:
            diags.append(f"constant {name}: payload of {data.size} values, shape needs {spec.size}")
        lo, hi = DTYPE_RANGE[spec.dtype] if spec.dtype in DTYPE_RANGE else (0, 0)
        if data.size and (data.min() < lo or data.max() > hi):
            diags.append(f"constant {name}: values outside {spec.dtype} range")

    specs: dict[str, TensorSpec] = {t.name: t for t in g.inputs}
    specs.update({n: s for n, (s, _) in g.constants.items()})
    seen_ids: set[str] = set()
    act_layouts: set[str] = {t.layout for t in g.inputs if t.rank == 4}
    for node in g.nodes:
        if node.id in defined or node.id in seen_ids:
            diags.append(f"node {node.id}: duplicate id")
        seen_ids.add(node.id)
        missing = [r for r in node.inputs if r not in specs]
        if missing:
            for r in missing:
                diags.append(f"node {node.id}: reference to undefined value {r!r}")
            continue
        out = infer_node_spec(node, [specs[r] for r in node.inputs], diags, g.custom_layouts)
        if out is None:
            continue
        specs[node.id] = out
        if out.rank == 4 and out.layout:
            act_layouts.add(out.layout)
    if len(act_layouts) > 1:
        diags.append(f"mixed activation layouts {sorted(act_layouts)}")
    for ref in g.outputs:
        if ref not in specs:
            diags.append(f"output reference to undefined value {ref!r}")
    return diags


# ---------------------------------------------------------------------------
# JSON parse / serialize
# ---------------------------------------------------------------------------

_TUPLE_ATTRS = ("strides", "padding", "dilation", "kernel", "shape", "begin", "end")


def _normalize_attrs(attrs: dict) -> dict:
    out = {}
    for k, v in attrs.items():
        if k in _TUPLE_ATTRS and isinstance(v, list):
            out[k] = tuple(v)
        elif k == "pads" and isinstance(v, list):
            out[k] = tuple((lo, hi) for lo, hi in v)
        else:
            out[k] = v
    return out


def parse_graph(text: str) -> Graph:
    """Parse + structurally validate a graph document (schema in README)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphParseError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise GraphSchemaError("top level must be an object")
    for key in ("name", "inputs", "nodes", "outputs"):
        if key not in doc:
            raise GraphSchemaError(f"missing top-level field {key!r}")

    def need(obj: dict, key: str, ctx: str):
        if key not in obj:
            raise GraphSchemaError(f"{ctx}: missing field {key!r}")
        return obj[key]

    inputs = []
    for item in doc["inputs"]:
        inputs.append(TensorSpec(
            name=need(item, "name", "inputs[]"),
            shape=tuple(need(item, "shape", "inputs[]")),
            dtype=need(item, "dtype", "inputs[]"),
            layout=item.get("layout"),
        ))
    constants = {}
    for name, item in doc.get("constants", {}).items():
        spec = TensorSpec(
            name=name,
            shape=tuple(need(item, "shape", f"constants[{name}]")),
            dtype=need(item, "dtype", f"constants[{name}]"),
            layout=item.get("layout"),
        )
        data = np.asarray(need(item, "data", f"constants[{name}]"), dtype=np.int64)
        constants[name] = (spec, data)
    nodes = []
    for item in doc["nodes"]:
        nodes.append(Node(
            id=need(item, "id", "nodes[]"),
            op=need(item, "op", "nodes[]"),
            attrs=_normalize_attrs(item.get("attrs", {})),
            inputs=tuple(normalize_ref(r) for r in need(item, "inputs", "nodes[]")),
        ))
    g = Graph(
        name=doc["name"],
        inputs=inputs,
        constants=constants,
        nodes=nodes,
        outputs=[normalize_ref(r) for r in doc["outputs"]],
        custom_layouts=dict(doc.get("custom_layouts", {})),
    )

    # defined-before-use ordering makes dangling references and cycles the
    # same class of error
    defined = set(g.input_names()) | set(constants)
    for node in g.nodes:
        for r in node.inputs:
            if r not in defined:
                raise GraphStructureError(
                    f"node {node.id}: reference to undefined value {r!r} "
                    "(dangling, or the node list is not topologically ordered)")
        if node.id in defined:
            raise GraphStructureError(f"duplicate value name {node.id!r}")
        defined.add(node.id)
    for ref in g.outputs:
        if ref not in defined:
            raise GraphStructureError(f"output reference to undefined value {ref!r}")
    return g


def serialize_graph(g: Graph) -> str:
    def spec_doc(t: TensorSpec) -> dict:
        d = {"name": t.name, "shape": list(t.shape), "dtype": t.dtype}
        if t.layout:
            d["layout"] = t.layout
        return d

    def attr_doc(attrs: dict) -> dict:
        out = {}
        for k, v in attrs.items():
            if isinstance(v, tuple):
                out[k] = [list(e) if isinstance(e, tuple) else e for e in v]
            else:
                out[k] = v
        return out

    doc = {
        "name": g.name,
        "inputs": [spec_doc(t) for t in g.inputs],
        "constants": {
            name: {**{k: v for k, v in spec_doc(spec).items() if k != "name"},
                   "data": [int(v) for v in data.reshape(-1)]}
            for name, (spec, data) in g.constants.items()
        },
        "nodes": [
            {"id": n.id, "op": n.op, "attrs": attr_doc(n.attrs), "inputs": list(n.inputs)}
            for n in g.nodes
        ],
        "outputs": list(g.outputs),
    }
    if g.custom_layouts:
        doc["custom_layouts"] = dict(g.custom_layouts)
    return json.dumps(doc, indent=1)


def clone_graph(g: Graph) -> Graph:
    return Graph(
        name=g.name,
        inputs=list(g.inputs),
        constants={k: (s, d.copy()) for k, (s, d) in g.constants.items()},
        nodes=list(g.nodes),
        outputs=list(g.outputs),
        custom_layouts=dict(g.custom_layouts),
    )
