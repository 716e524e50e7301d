"""Host fallback code generation: one naive-loop C function per unmatched
node, bit-exact with the reference interpreter. No tiling, no platform APIs.
"""

from __future__ import annotations

import numpy as np

from .ir import DTYPE_SIZE, Graph, Node, TensorSpec, _conv_attrs
from .layouts import weight_axes

CT = {"i8": "int8_t", "i32": "int32_t"}


def _axmap(layout: str) -> dict[str, int]:
    return {c: i for i, c in enumerate(layout)}


def _off4(spec: TensorSpec, n: str, c: str, y: str, x: str) -> str:
    """Linear offset expression for a 4-D tensor in its storage layout."""
    ax = _axmap(spec.layout)
    order = sorted(ax, key=ax.get)
    by = {"N": n, "C": c, "H": y, "W": x}
    expr = by[order[0]]
    for dim in order[1:]:
        expr = f"({expr}) * {spec.shape[ax[dim]]} + {by[dim]}"
    return expr


def _const_array(name: str, values) -> str:
    vals = ", ".join(str(int(v)) for v in np.asarray(values).reshape(-1))
    return f"static const int32_t {name}[] = {{ {vals} }};"


class FallbackEmitter:
    def __init__(self, name: str, node: Node, g: Graph, specs: dict[str, TensorSpec],
                 value_symbol):
        self.name = name
        self.node = node
        self.g = g
        self.specs = specs
        self.value_symbol = value_symbol
        self.lines: list[str] = []
        self.pre: list[str] = []
        self.indent = 1

    def emit(self, text: str = ""):
        self.lines.append(("    " * self.indent + text) if text else "")

    def render(self) -> str:
        node = self.node
        out_spec = self.specs[node.id]
        params = []
        args = {}
        for i, ref in enumerate(node.inputs):
            spec = self.specs[ref]
            if ref in self.g.constants:
                args[i] = self.value_symbol(ref)
            else:
                pname = f"in{i}"
                params.append(f"const {CT[spec.dtype]} *{pname}")
                args[i] = pname
        params.append(f"{CT[out_spec.dtype]} *out0")
        body = getattr(self, f"op_{node.op}")(args, out_spec)
        head = [
            "#include <stdint.h>",
            "#include <string.h>",
            '#include "match_api.h"',
            '#include "weights.h"',
            "",
        ]
        head.extend(self.pre)
        head.append(f"void {self.name}({', '.join(params)})")
        head.append("{")
        head.extend(body)
        head.append("}")
        return "\n".join(head) + "\n"

    # -- op bodies ----------------------------------------------------------

    def _loop4(self, spec: TensorSpec):
        ax = _axmap(spec.layout)
        n, c, h, w = (spec.shape[ax[a]] for a in "NCHW")
        self.emit(f"for (int n = 0; n < {n}; ++n)")
        self.emit(f"for (int c = 0; c < {c}; ++c)")
        self.emit(f"for (int y = 0; y < {h}; ++y)")
        self.emit(f"for (int x = 0; x < {w}; ++x) {{")
        self.indent += 1

    def op_conv2d(self, args, out_spec):
        self.lines = []
        node = self.node
        x = self.specs[node.inputs[0]]
        wsp = self.specs[node.inputs[1]]
        sy, sx, pt, pl, pb, pr, dy, dx, groups = _conv_attrs(node.attrs)
        axes = weight_axes(wsp.layout, self.g.custom_layouts)
        canon = [0] * 4
        for pos, axis in enumerate(axes):
            canon[axis] = wsp.shape[pos]
        k_n, cpg, fy_n, fx_n = canon
        ax = _axmap(x.layout)
        iy, ix = x.shape[ax["H"]], x.shape[ax["W"]]
        ic = x.shape[ax["C"]]
        kpg = k_n // groups
        # weight offset in storage order, from canonical (k, cw, fy, fx)
        wstrides = [1] * 4
        for i in range(2, -1, -1):
            wstrides[i] = wstrides[i + 1] * wsp.shape[i + 1]
        pos_of_axis = {axis: pos for pos, axis in enumerate(axes)}
        wterm = {0: "k", 1: "cw", 2: "fy", 3: "fx"}
        woff = " + ".join(f"({wterm[a]}) * {wstrides[pos_of_axis[a]]}" for a in range(4))
        self._loop4(out_spec)
        self.emit("int32_t acc = 0;")
        self.emit(f"for (int ci = (c / {kpg}) * {cpg}; ci < (c / {kpg} + 1) * {cpg}; ++ci)")
        self.emit(f"for (int fy = 0; fy < {fy_n}; ++fy)")
        self.emit(f"for (int fx = 0; fx < {fx_n}; ++fx) {{")
        self.indent += 1
        self.emit(f"int yy = y * {sy} + fy * {dy} - {pt};")
        self.emit(f"int xx = x * {sx} + fx * {dx} - {pl};")
        self.emit(f"if (yy < 0 || yy >= {iy} || xx < 0 || xx >= {ix}) continue;")
        self.emit(f"int k = c, cw = ci % {cpg};")
        self.emit(f"acc += (int32_t){args[0]}[{_off4(x, 'n', 'ci', 'yy', 'xx')}]"
                  f" * (int32_t){args[1]}[{woff}];")
        self.indent -= 1
        self.emit("}")
        self.emit(f"out0[{_off4(out_spec, 'n', 'c', 'y', 'x')}] = acc;")
        self.indent -= 1
        self.emit("}")
        return self.lines

    def op_dense(self, args, out_spec):
        self.lines = []
        x = self.specs[self.node.inputs[0]]
        wsp = self.specs[self.node.inputs[1]]
        feat = x.size // x.shape[0]
        self.emit(f"for (int n = 0; n < {out_spec.shape[0]}; ++n)")
        self.emit(f"for (int k = 0; k < {wsp.shape[0]}; ++k) {{")
        self.indent += 1
        self.emit("int32_t acc = 0;")
        self.emit(f"for (int c = 0; c < {feat}; ++c)")
        self.emit(f"    acc += (int32_t){args[0]}[n * {feat} + c]"
                  f" * (int32_t){args[1]}[k * {feat} + c];")
        self.emit(f"out0[n * {wsp.shape[0]} + k] = acc;")
        self.indent -= 1
        self.emit("}")
        return self.lines

    def _elementwise_binary(self, args, out_spec, expr):
        self.lines = []
        a = self.specs[self.node.inputs[0]]
        b = self.specs[self.node.inputs[1]]
        if a.shape == b.shape:
            self.emit(f"for (long i = 0; i < {a.size}; ++i)")
            self.emit(f"    out0[i] = {expr.format(a=f'{args[0]}[i]', b=f'{args[1]}[i]')};")
            return self.lines
        # right operand broadcast per channel
        if a.rank == 4:
            self._loop4(a)
            off = _off4(a, "n", "c", "y", "x")
            self.emit(f"out0[{off}] = " + expr.format(a=f"{args[0]}[{off}]", b=f"{args[1]}[c]") + ";")
            self.indent -= 1
            self.emit("}")
        else:
            ch = b.shape[0]
            self.emit(f"for (long i = 0; i < {a.size}; ++i)")
            self.emit(f"    out0[i] = " + expr.format(a=f"{args[0]}[i]", b=f"{args[1]}[i % {ch}]") + ";")
        return self.lines

    def op_add(self, args, out_spec):
        return self._elementwise_binary(args, out_spec, "(int32_t){a} + (int32_t){b}")

    def op_mul(self, args, out_spec):
        return self._elementwise_binary(args, out_spec, "(int32_t){a} * (int32_t){b}")

    def op_bias_add(self, args, out_spec):
        return self._elementwise_binary(args, out_spec, "(int32_t){a} + (int32_t){b}")

    def op_relu(self, args, out_spec):
        self.lines = []
        x = self.specs[self.node.inputs[0]]
        self.emit(f"for (long i = 0; i < {x.size}; ++i)")
        self.emit(f"    out0[i] = {args[0]}[i] < 0 ? 0 : {args[0]}[i];")
        return self.lines

    def op_clip(self, args, out_spec):
        self.lines = []
        x = self.specs[self.node.inputs[0]]
        lo, hi = self.node.attrs["min"], self.node.attrs["max"]
        self.emit(f"for (long i = 0; i < {x.size}; ++i) {{")
        self.emit(f"    int32_t v = {args[0]}[i];")
        self.emit(f"    out0[i] = v < {lo} ? {lo} : (v > {hi} ? {hi} : v);")
        self.emit("}")
        return self.lines

    def op_cast(self, args, out_spec):
        self.lines = []
        x = self.specs[self.node.inputs[0]]
        self.emit(f"for (long i = 0; i < {x.size}; ++i)")
        self.emit(f"    out0[i] = ({CT[out_spec.dtype]}){args[0]}[i];")
        return self.lines

    def op_right_shift(self, args, out_spec):
        self.lines = []
        x = self.specs[self.node.inputs[0]]
        self.emit(f"for (long i = 0; i < {x.size}; ++i)")
        self.emit(f"    out0[i] = {args[0]}[i] >> {self.node.attrs['amount']};")
        return self.lines

    def op_div(self, args, out_spec):
        # C division already truncates toward zero
        return self._elementwise_binary(args, out_spec, "(int32_t){a} / (int32_t){b}")

    def op_requant(self, args, out_spec):
        self.lines = []
        node = self.node
        x = self.specs[node.inputs[0]]
        per_channel = isinstance(node.attrs["M"], list) or isinstance(node.attrs["B"], list)
        if isinstance(node.attrs["M"], list):
            self.pre.append(_const_array(f"{self.name}_m", node.attrs["M"]))
        if isinstance(node.attrs["B"], list):
            self.pre.append(_const_array(f"{self.name}_b", node.attrs["B"]))
        m = f"{self.name}_m[c]" if isinstance(node.attrs["M"], list) else str(node.attrs["M"])
        b = f"{self.name}_b[c]" if isinstance(node.attrs["B"], list) else str(node.attrs["B"])
        s = node.attrs["S"]
        if x.rank == 4 and per_channel:
            self._loop4(x)
            off = _off4(x, "n", "c", "y", "x")
            self.emit(f"long long t = (long long){args[0]}[{off}] * {m} + {b};")
            self.emit(f"int32_t v = (int32_t)(t >> {s});")
            self.emit(f"out0[{off}] = v < -128 ? -128 : (v > 127 ? 127 : v);")
            self.indent -= 1
            self.emit("}")
        else:
            ch = x.shape[-1] if x.rank != 4 else 1
            self.emit(f"for (long i = 0; i < {x.size}; ++i) {{")
            self.indent += 1
            if per_channel:
                self.emit(f"int c = i % {ch};")
            self.emit(f"long long t = (long long){args[0]}[i] * {m} + {b};")
            self.emit(f"int32_t v = (int32_t)(t >> {s});")
            self.emit("out0[i] = v < -128 ? -128 : (v > 127 ? 127 : v);")
            self.indent -= 1
            self.emit("}")
        return self.lines

    def _pool(self, args, out_spec, is_max):
        self.lines = []
        node = self.node
        x = self.specs[node.inputs[0]]
        ky, kx = node.attrs["kernel"]
        sy, sx = node.attrs.get("strides", (ky, kx))
        pt, pl, pb, pr = node.attrs.get("padding", (0, 0, 0, 0))
        ax = _axmap(x.layout)
        iy, ix = x.shape[ax["H"]], x.shape[ax["W"]]
        self._loop4(out_spec)
        if is_max:
            self.emit("int32_t acc = -2147483647 - 1;")
        else:
            self.emit("int32_t acc = 0;")
        self.emit(f"for (int fy = 0; fy < {ky}; ++fy)")
        self.emit(f"for (int fx = 0; fx < {kx}; ++fx) {{")
        self.indent += 1
        self.emit(f"int yy = y * {sy} + fy - {pt};")
        self.emit(f"int xx = x * {sx} + fx - {pl};")
        pad_v = "-128" if is_max else "0"
        self.emit(f"int32_t v = (yy < 0 || yy >= {iy} || xx < 0 || xx >= {ix}) ? {pad_v}"
                  f" : {args[0]}[{_off4(x, 'n', 'c', 'yy', 'xx')}];")
        if is_max:
            self.emit("if (v > acc) acc = v;")
        else:
            self.emit("acc += v;")
        self.indent -= 1
        self.emit("}")
        if is_max:
            self.emit(f"out0[{_off4(out_spec, 'n', 'c', 'y', 'x')}] = acc;")
        else:
            self.emit(f"out0[{_off4(out_spec, 'n', 'c', 'y', 'x')}] = acc / {ky * kx};")
        self.indent -= 1
        self.emit("}")
        return self.lines

    def op_avgpool2d(self, args, out_spec):
        return self._pool(args, out_spec, is_max=False)

    def op_maxpool2d(self, args, out_spec):
        return self._pool(args, out_spec, is_max=True)

    def _memcpy(self, args, out_spec):
        self.lines = []
        self.emit(f"memcpy(out0, {args[0]}, {out_spec.size * DTYPE_SIZE[out_spec.dtype]});")
        return self.lines

    def op_reshape(self, args, out_spec):
        return self._memcpy(args, out_spec)

    def op_flatten(self, args, out_spec):
        return self._memcpy(args, out_spec)

    def op_pad(self, args, out_spec):
        self.lines = []
        x = self.specs[self.node.inputs[0]]
        pads = self.node.attrs["pads"]
        self.emit(f"memset(out0, 0, {out_spec.size * DTYPE_SIZE[out_spec.dtype]});")
        idx = [f"i{j}" for j in range(x.rank)]
        for j, e in enumerate(x.shape):
            self.emit(f"for (int {idx[j]} = 0; {idx[j]} < {e}; ++{idx[j]})")
        src = idx[0]
        for j in range(1, x.rank):
            src = f"({src}) * {x.shape[j]} + {idx[j]}"
        dst = f"{idx[0]} + {pads[0][0]}"
        for j in range(1, x.rank):
            dst = f"({dst}) * {out_spec.shape[j]} + {idx[j]} + {pads[j][0]}"
        self.emit(f"    out0[{dst}] = {args[0]}[{src}];")
        return self.lines

    def op_slice(self, args, out_spec):
        self.lines = []
        x = self.specs[self.node.inputs[0]]
        begin = self.node.attrs["begin"]
        idx = [f"i{j}" for j in range(x.rank)]
        for j, e in enumerate(out_spec.shape):
            self.emit(f"for (int {idx[j]} = 0; {idx[j]} < {e}; ++{idx[j]})")
        src = f"{idx[0]} + {begin[0]}"
        for j in range(1, x.rank):
            src = f"({src}) * {x.shape[j]} + {idx[j]} + {begin[j]}"
        dst = idx[0]
        for j in range(1, x.rank):
            dst = f"({dst}) * {out_spec.shape[j]} + {idx[j]}"
        self.emit(f"    out0[{dst}] = {args[0]}[{src}];")
        return self.lines
