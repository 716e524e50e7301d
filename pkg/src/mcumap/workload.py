"""7-dimension loop-nest view of a matched pattern (K, C, OY, OX, FY, FX +
stride/dilation/groups), with per-operand tile geometry helpers used by the
allocator, the cost evaluation and the code generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import Graph, NCHW, channel_axis, _conv_attrs, value_specs
from .costmodel import choose_spatial_adaptation
from .layouts import weight_dims
from .target import DIM_NAMES, ExecModule

K, C, OY, OX, FY, FX = range(6)
DIM_INDEX = {n: i for i, n in enumerate(DIM_NAMES)}

# dims whose growth enlarges an operand's tile
RELEVANCE = {
    "conv": {"I": (C, OY, OX, FY, FX), "W": (K, C, FY, FX), "O": (K, OY, OX)},
    "dense": {"I": (C,), "W": (K, C), "O": (K,)},
    "add": {"I": (K, OY, OX), "W": (K, OY, OX), "O": (K, OY, OX)},
}
REDUCTION_DIMS = {"conv": (C, FY, FX), "dense": (C, FY, FX), "add": ()}


@dataclass
class Workload:
    kind: str                       # conv | dense | add
    dims: tuple[int, ...]           # adapted extents, DIM_NAMES order
    real_dims: tuple[int, ...]      # pre-adaptation extents
    spatial: tuple[int, ...]        # resolved unroll per dim
    strides: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    groups: int = 1
    tail: tuple[str, ...] = ()
    pattern: str = ""
    act_layout: str = NCHW
    weight_dim_order: tuple[str, ...] = ("K", "C", "FY", "FX")
    macs: int = 0

    @property
    def operands(self) -> tuple[str, ...]:
        return ("I", "W", "O")

    def relevant(self, operand: str) -> tuple[int, ...]:
        return RELEVANCE[self.kind][operand]

    def reduction_dims(self) -> tuple[int, ...]:
        return REDUCTION_DIMS[self.kind]

    def temporal_extents(self) -> tuple[int, ...]:
        return tuple(d // s for d, s in zip(self.dims, self.spatial))

    def input_window(self, ext: tuple[int, ...]) -> tuple[int, int]:
        iy = (ext[OY] - 1) * self.strides[0] + (ext[FY] - 1) * self.dilation[0] + 1
        ix = (ext[OX] - 1) * self.strides[1] + (ext[FX] - 1) * self.dilation[1] + 1
        return iy, ix

    def reduction_channels(self, c_extent: int) -> int:
        if self.groups == 1:
            return c_extent
        return max(1, c_extent // self.groups)

    def operand_extents(self, operand: str, ext: tuple[int, ...]) -> tuple[int, ...]:
        """Physical tile extents of `operand`, storage-major order."""
        if self.kind == "add":
            hw = (ext[OY], ext[OX], ext[K]) if self.act_layout == "NHWC" \
                else (ext[K], ext[OY], ext[OX])
            return hw
        if operand == "I":
            if self.kind == "dense":
                return (ext[C],)
            iy, ix = self.input_window(ext)
            return (iy, ix, ext[C]) if self.act_layout == "NHWC" else (ext[C], iy, ix)
        if operand == "W":
            if self.kind == "dense":
                return (ext[K], ext[C])
            by_dim = {"K": ext[K], "C": self.reduction_channels(ext[C]),
                      "FY": ext[FY], "FX": ext[FX]}
            return tuple(by_dim[d] for d in self.weight_dim_order)
        if self.kind == "dense":
            return (ext[K],)
        return (ext[OY], ext[OX], ext[K]) if self.act_layout == "NHWC" \
            else (ext[K], ext[OY], ext[OX])

    def operand_bytes(self, operand: str, ext: tuple[int, ...]) -> int:
        n = 1
        for e in self.operand_extents(operand, ext):
            n *= e
        return n  # all modeled operands are 1 byte/element (i8)


def scratch_bytes(w: Workload, module: ExecModule) -> int:
    """L1 workspace the backend kernel library reserves (im2col buffers)."""
    tr = module.transforms
    if tr.scratch_model != "im2col" or w.kind != "conv":
        return 0
    if w.dims[FY] == 1 and w.dims[FX] == 1:
        return 0
    channels = w.reduction_channels(w.real_dims[C])
    return 2 * tr.scratch_cores * w.real_dims[FY] * w.real_dims[FX] * channels


def extract_workload(anchor_node, chain_ops: tuple[str, ...], g: Graph,
                     module: ExecModule, pattern_name: str = "") -> Workload:
    """Workload of a matched chain: dims from the anchor, spatial adaptation
    resolved against the module's unrolling."""
    specs = value_specs(g)
    x = specs[anchor_node.inputs[0]]
    out = specs[anchor_node.id]
    op = anchor_node.op

    if op == "conv2d":
        sy, sx, _, _, _, _, dy, dx, groups = _conv_attrs(anchor_node.attrs)
        ax = channel_axis(x.layout)
        c = x.shape[ax]
        k = out.shape[channel_axis(out.layout)]
        w = specs[anchor_node.inputs[1]]
        wdims = weight_dims(w.layout, g.custom_layouts)
        by_dim = dict(zip(wdims, w.shape))
        if module.transforms.weight_layout is not None:
            # cost the storage order the module will re-block the weights into
            canon = ("K", "C", "FY", "FX")
            wdims = tuple(canon[a] for a in module.transforms.weight_layout_axes)
        fy, fx = by_dim["FY"], by_dim["FX"]
        if out.layout == "NHWC":
            _, oy, ox, _ = out.shape
        else:
            _, _, oy, ox = out.shape
        real = (k, c, oy, ox, fy, fx)
        kind = "conv"
        macs = k * oy * ox * (c // groups) * fy * fx
        strides, dilation = (sy, sx), (dy, dx)
        weight_order = wdims
    elif op == "dense":
        w = specs[anchor_node.inputs[1]]
        real = (w.shape[0], w.shape[1], 1, 1, 1, 1)
        kind, groups = "dense", 1
        macs = w.shape[0] * w.shape[1]
        strides, dilation = (1, 1), (1, 1)
        weight_order = ("K", "C")
    elif op == "add":
        if x.rank == 4:
            ch = x.shape[channel_axis(x.layout)]
            if x.layout == "NHWC":
                _, oy, ox, _ = x.shape
            else:
                _, _, oy, ox = x.shape
        else:
            ch, oy, ox = x.shape[-1], 1, 1
        real = (ch, 1, oy, ox, 1, 1)
        kind, groups = "add", 1
        macs = ch * oy * ox
        strides, dilation = (1, 1), (1, 1)
        weight_order = ("K", "C", "FY", "FX")
    else:
        raise AssertionError(f"workload extraction for op {op!r} (constraints should reject)")

    spatial = [1] * 6
    adapted = list(real)
    for dim, unroll in module.spatial.unrolls.items():
        i = DIM_INDEX[dim]
        choice, value = choose_spatial_adaptation(real[i], unroll)
        if choice == "keep":
            spatial[i] = value
        else:
            spatial[i] = unroll
            adapted[i] = value

    return Workload(
        kind=kind,
        dims=tuple(adapted),
        real_dims=tuple(real),
        spatial=tuple(spatial),
        strides=strides,
        dilation=dilation,
        groups=groups,
        tail=tuple(chain_ops[1:]),
        pattern=pattern_name,
        act_layout=x.layout or NCHW,
        weight_dim_order=weight_order,
        macs=macs,
    )
