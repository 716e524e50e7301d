"""Exact integer interpreter for the graph IR.

Semantics are the contract the generated C code must reproduce bit-exactly:
i32 accumulation for conv/dense, arithmetic (floor) right shifts, division
truncating toward zero, and saturation only where an op specifies it.
Arrays are carried as int64 so no intermediate ever wraps.
"""

from __future__ import annotations

import numpy as np

from .ir import (
    I8, NCHW, OIHW, OHWI, DTYPE_RANGE, Graph, Node, TensorSpec,
    channel_axis, conv_out_extent, _conv_attrs,
)
from .layouts import weight_to_oihw


def trunc_div(a: np.ndarray, b) -> np.ndarray:
    """C-style integer division (truncates toward zero, unlike //)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    q = np.abs(a) // np.abs(b)
    return np.where((a < 0) ^ (b < 0), -q, q)


def requant_values(x: np.ndarray, m, b, s: int) -> np.ndarray:
    """clip(((x * M + B) >> S), -128, 127) with floor (arithmetic) shift."""
    t = x.astype(np.int64) * np.asarray(m, dtype=np.int64) + np.asarray(b, dtype=np.int64)
    return np.clip(t >> np.int64(s), -128, 127)


def _to_nchw(x: np.ndarray, layout: str) -> np.ndarray:
    return x if layout == NCHW else np.transpose(x, (0, 3, 1, 2))


def _from_nchw(x: np.ndarray, layout: str) -> np.ndarray:
    return x if layout == NCHW else np.transpose(x, (0, 2, 3, 1))


def conv2d_nchw(x, w, sy, sx, pt, pl, pb, pr, dy, dx, groups) -> np.ndarray:
    """x: (N, C, IY, IX), w: (K, C/g, FY, FX), both int64; i32-exact output."""
    n, c, iy, ix = x.shape
    k, cg, fy, fx = w.shape
    oy = conv_out_extent(iy, pt, pb, fy, sy, dy)
    ox = conv_out_extent(ix, pl, pr, fx, sx, dx)
    xp = np.zeros((n, c, iy + pt + pb, ix + pl + pr), dtype=np.int64)
    xp[:, :, pt:pt + iy, pl:pl + ix] = x
    g = groups
    xg = xp.reshape(n, g, c // g, xp.shape[2], xp.shape[3])
    wg = w.reshape(g, k // g, cg, fy, fx)
    out = np.zeros((n, g, k // g, oy, ox), dtype=np.int64)
    for f_y in range(fy):
        for f_x in range(fx):
            xs = xg[:, :, :, f_y * dy:f_y * dy + (oy - 1) * sy + 1:sy,
                    f_x * dx:f_x * dx + (ox - 1) * sx + 1:sx]
            out += np.einsum("ngcyx,gkc->ngkyx", xs, wg[:, :, :, f_y, f_x])
    return out.reshape(n, k, oy, ox)


def _pool_windows(x, ky, kx, sy, sx, pt, pl, pb, pr, pad_value):
    n, c, iy, ix = x.shape
    oy = conv_out_extent(iy, pt, pb, ky, sy, 1)
    ox = conv_out_extent(ix, pl, pr, kx, sx, 1)
    xp = np.full((n, c, iy + pt + pb, ix + pl + pr), pad_value, dtype=np.int64)
    xp[:, :, pt:pt + iy, pl:pl + ix] = x
    for f_y in range(ky):
        for f_x in range(kx):
            yield xp[:, :, f_y:f_y + (oy - 1) * sy + 1:sy, f_x:f_x + (ox - 1) * sx + 1:sx]


def _per_channel(v, x_rank: int, layout: str | None) -> np.ndarray:
    """Broadcast a scalar or per-channel list against x."""
    arr = np.asarray(v, dtype=np.int64)
    if arr.ndim == 0:
        return arr
    if x_rank == 4:
        shape = [1, 1, 1, 1]
        shape[channel_axis(layout or NCHW)] = arr.shape[0]
        return arr.reshape(shape)
    return arr  # rank 2: broadcasts over the trailing (channel) axis


def eval_node(node: Node, args: list[np.ndarray], specs: list[TensorSpec],
              custom_layouts: dict[str, str]) -> np.ndarray:
    op = node.op
    x = args[0]
    if op == "conv2d":
        xs, ws = specs
        w = weight_to_oihw(args[1], ws.layout, custom_layouts)
        xn = _to_nchw(x, xs.layout)
        y = conv2d_nchw(xn, w, *_conv_attrs(node.attrs))
        return _from_nchw(y, xs.layout)
    if op == "dense":
        flat = x.reshape(x.shape[0], -1)
        return flat @ args[1].T
    if op == "add":
        return x + _per_channel(args[1], x.ndim, specs[0].layout) if specs[1].rank == 1 else x + args[1]
    if op == "mul":
        return x * _per_channel(args[1], x.ndim, specs[0].layout) if specs[1].rank == 1 else x * args[1]
    if op == "bias_add":
        return x + _per_channel(args[1], x.ndim, specs[0].layout)
    if op == "relu":
        return np.maximum(x, 0)
    if op == "clip":
        return np.clip(x, node.attrs["min"], node.attrs["max"])
    if op == "cast":
        lo, hi = DTYPE_RANGE[node.attrs["dtype"]]
        width = hi - lo + 1
        return (x - lo) % width + lo  # two's-complement wrap
    if op == "right_shift":
        return x >> np.int64(node.attrs["amount"])
    if op == "div":
        d = _per_channel(args[1], x.ndim, specs[0].layout) if specs[1].rank == 1 else args[1]
        return trunc_div(x, d)
    if op == "avgpool2d":
        ky, kx = node.attrs["kernel"]
        sy, sx = node.attrs.get("strides", (ky, kx))
        pt, pl, pb, pr = node.attrs.get("padding", (0, 0, 0, 0))
        xn = _to_nchw(x, specs[0].layout)
        acc = None
        for win in _pool_windows(xn, ky, kx, sy, sx, pt, pl, pb, pr, 0):
            acc = win.copy() if acc is None else acc + win
        return _from_nchw(trunc_div(acc, ky * kx), specs[0].layout)
    if op == "maxpool2d":
        ky, kx = node.attrs["kernel"]
        sy, sx = node.attrs.get("strides", (ky, kx))
        pt, pl, pb, pr = node.attrs.get("padding", (0, 0, 0, 0))
        lo = DTYPE_RANGE[specs[0].dtype][0]
        xn = _to_nchw(x, specs[0].layout)
        acc = None
        for win in _pool_windows(xn, ky, kx, sy, sx, pt, pl, pb, pr, lo):
            acc = win.copy() if acc is None else np.maximum(acc, win)
        return _from_nchw(acc, specs[0].layout)
    if op == "requant":
        m = _per_channel(node.attrs["M"], x.ndim, specs[0].layout)
        b = _per_channel(node.attrs["B"], x.ndim, specs[0].layout)
        return requant_values(x, m, b, node.attrs["S"])
    if op == "reshape":
        return x.reshape(node.attrs["shape"])
    if op == "flatten":
        return x.reshape(x.shape[0], -1)
    if op == "pad":
        return np.pad(x, node.attrs["pads"], constant_values=0)
    if op == "slice":
        idx = tuple(slice(b, e) for b, e in zip(node.attrs["begin"], node.attrs["end"]))
        return x[idx]
    raise AssertionError(f"uninterpretable op {op!r}")


def interpret_values(g: Graph, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Evaluate every node; returns the full value environment."""
    from .ir import value_specs
    specs = value_specs(g)
    env: dict[str, np.ndarray] = {}
    for t in g.inputs:
        if t.name not in inputs:
            raise KeyError(f"missing graph input {t.name!r}")
        arr = np.asarray(inputs[t.name], dtype=np.int64).reshape(t.shape)
        env[t.name] = arr
    for name, (spec, data) in g.constants.items():
        env[name] = data.reshape(spec.shape)
    for node in g.nodes:
        args = [env[r] for r in node.inputs]
        in_specs = [specs[r] for r in node.inputs]
        env[node.id] = eval_node(node, args, in_specs, g.custom_layouts)
    return env


def interpret_graph(g: Graph, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    env = interpret_values(g, inputs)
    return {ref: env[ref] for ref in g.outputs}


def canonical(arr: np.ndarray, spec: TensorSpec) -> np.ndarray:
    """View a value in canonical (NCHW for 4-D) index order for comparisons."""
    if spec.rank == 4 and spec.layout == "NHWC":
        return np.transpose(arr, (0, 3, 1, 2))
    return arr
