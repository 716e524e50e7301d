"""Bundled network fixtures shaped after the MLPerf Tiny suite (image
classifier ResNet backbone, 0.25-width MobileNet, keyword-spotting DS-CNN,
and a fully-connected autoencoder). Weights are deterministic pseudo-random
int8; requantization constants are calibrated against a probe input so
activations stay well inside the i8 range.
"""

from __future__ import annotations

import numpy as np

from .interp import eval_node
from .ir import Graph, I8, I32, NCHW, Node, OIHW, TensorSpec, infer_node_spec


class GraphBuilder:
    def __init__(self, name: str, seed: int):
        self.g = Graph(name, [], {}, [], [])
        self.rng = np.random.default_rng(seed)
        self.specs: dict[str, TensorSpec] = {}
        self.probe: dict[str, np.ndarray] = {}
        self._n = 0

    def _uid(self, base: str) -> str:
        self._n += 1
        return f"{base}{self._n}"

    def input(self, name: str, shape, layout=None) -> str:
        spec = TensorSpec(name, tuple(shape), I8, layout)
        self.g.inputs.append(spec)
        self.specs[name] = spec
        self.probe[name] = self.rng.integers(-100, 101, size=shape).astype(np.int64)
        return name

    def const(self, name: str, data: np.ndarray, dtype: str, layout=None) -> str:
        data = np.asarray(data, dtype=np.int64)
        spec = TensorSpec(name, data.shape, dtype, layout)
        self.g.constants[name] = (spec, data.reshape(-1))
        self.specs[name] = spec
        self.probe[name] = data
        return name

    def node(self, nid: str, op: str, attrs: dict, inputs) -> str:
        node = Node(nid, op, attrs, tuple(inputs))
        diags: list[str] = []
        spec = infer_node_spec(node, [self.specs[r] for r in inputs], diags)
        if spec is None:
            raise AssertionError(f"fixture builder: {diags}")
        self.g.nodes.append(node)
        self.specs[nid] = spec
        self.probe[nid] = eval_node(node, [self.probe[r] for r in inputs],
                                    [self.specs[r] for r in inputs], {})
        return nid

    def conv(self, x: str, k: int, fy: int, fx: int, stride=(1, 1),
             pad=(0, 0, 0, 0), groups: int = 1, name: str | None = None) -> str:
        c = self.specs[x].shape[1]
        w = self.rng.integers(-64, 64, size=(k, c // groups, fy, fx))
        wname = self.const(self._uid("w"), w, I8, OIHW)
        nid = name or self._uid("conv")
        return self.node(nid, "conv2d",
                         {"strides": tuple(stride), "padding": tuple(pad),
                          "dilation": (1, 1), "groups": groups}, [x, wname])

    def dense(self, x: str, k: int, name: str | None = None) -> str:
        feat = self.specs[x].size // self.specs[x].shape[0]
        w = self.rng.integers(-64, 64, size=(k, feat))
        wname = self.const(self._uid("w"), w, I8)
        return self.node(name or self._uid("fc"), "dense", {}, [x, wname])

    def bias_add(self, x: str, scale: int = 64, name: str | None = None) -> str:
        spec = self.specs[x]
        ch = spec.shape[1] if spec.rank == 4 else spec.shape[-1]
        b = self.rng.integers(-scale, scale + 1, size=(ch,))
        bname = self.const(self._uid("b"), b, I32)
        return self.node(name or self._uid("bias"), "bias_add", {}, [x, bname])

    def requant(self, x: str, per_channel: bool = True, name: str | None = None) -> str:
        """Calibrate M/S so the probe's peak maps near the top of i8."""
        spec = self.specs[x]
        ch = spec.shape[1] if spec.rank == 4 else spec.shape[-1]
        peak = max(1, int(np.abs(self.probe[x]).max()))
        if per_channel:
            m = self.rng.integers(200, 321, size=(ch,))
            m_ref = int(m.max())
        else:
            m = 256
            m_ref = 256
        s = max(0, (peak * m_ref // 100).bit_length())
        s = min(s, 31)
        if per_channel:
            b = self.rng.integers(-(1 << s) // 2, (1 << s) // 2 + 1, size=(ch,))
            attrs = {"M": [int(v) for v in m], "B": [int(v) for v in b], "S": s}
        else:
            attrs = {"M": 256, "B": int(self.rng.integers(-(1 << s) // 2, (1 << s) // 2 + 1)), "S": s}
        return self.node(name or self._uid("rq"), "requant", attrs, [x])

    def add(self, a: str, b: str, name: str | None = None) -> str:
        return self.node(name or self._uid("add"), "add", {}, [a, b])

    def avgpool(self, x: str, ky: int, kx: int, name: str | None = None) -> str:
        return self.node(name or self._uid("pool"), "avgpool2d",
                         {"kernel": (ky, kx), "strides": (ky, kx),
                          "padding": (0, 0, 0, 0)}, [x])

    def output(self, *refs: str):
        self.g.outputs.extend(refs)

    def finish(self) -> Graph:
        return self.g


def build_resnet8(seed: int = 11) -> Graph:
    """8-conv residual image classifier on 32x32x3 inputs, 26 nodes."""
    b = GraphBuilder("resnet8", seed)
    x = b.input("image", (1, 3, 32, 32), NCHW)
    stem = b.requant(b.conv(x, 16, 3, 3, (1, 1), (1, 1, 1, 1), name="conv_stem"))

    def block(x_in, k, stride, downsample):
        c1 = b.requant(b.conv(x_in, k, 3, 3, stride, (1, 1, 1, 1)))
        c2 = b.requant(b.conv(c1, k, 3, 3, (1, 1), (1, 1, 1, 1)))
        skip = x_in
        if downsample:
            skip = b.requant(b.conv(x_in, k, 1, 1, stride, (0, 0, 0, 0)))
        return b.requant(b.add(c2, skip))

    t = block(stem, 16, (1, 1), downsample=False)
    t = block(t, 32, (2, 2), downsample=True)
    t = block(t, 64, (2, 2), downsample=True)
    t = b.avgpool(t, 8, 8)
    logits = b.dense(t, 10, name="fc_logits")
    b.output(logits)
    return b.finish()


def build_mobilenet(seed: int = 23) -> Graph:
    """0.25-width depthwise-separable classifier on 96x96x3 inputs."""
    b = GraphBuilder("mobilenet025", seed)
    x = b.input("image", (1, 3, 96, 96), NCHW)
    t = b.requant(b.bias_add(b.conv(x, 8, 3, 3, (2, 2), (0, 0, 1, 1), name="conv_stem")))
    widths = [(8, 16, 1), (16, 32, 2), (32, 32, 1), (32, 64, 2), (64, 64, 1),
              (64, 128, 2), (128, 128, 1), (128, 128, 1), (128, 128, 1),
              (128, 128, 1), (128, 128, 1), (128, 256, 2), (256, 256, 1)]
    for cin, cout, stride in widths:
        pad = (0, 0, 1, 1) if stride == 2 else (1, 1, 1, 1)
        t = b.requant(b.bias_add(b.conv(t, cin, 3, 3, (stride, stride), pad,
                                        groups=cin)))
        t = b.requant(b.bias_add(b.conv(t, cout, 1, 1)))
    t = b.avgpool(t, 3, 3)
    logits = b.dense(t, 2, name="fc_logits")
    b.output(logits)
    return b.finish()


def build_dscnn(seed: int = 37) -> Graph:
    """Keyword-spotting net: rectangular 4x10 stem conv + 4 separable blocks."""
    b = GraphBuilder("dscnn", seed)
    x = b.input("spectrogram", (1, 1, 49, 10), NCHW)
    t = b.requant(b.conv(x, 64, 4, 10, (2, 2), (1, 4, 2, 4), name="conv_stem"))
    for _ in range(4):
        t = b.requant(b.conv(t, 64, 3, 3, (1, 1), (1, 1, 1, 1), groups=64))
        t = b.requant(b.conv(t, 64, 1, 1))
    t = b.avgpool(t, 25, 5)
    logits = b.dense(t, 12, name="fc_logits")
    b.output(logits)
    return b.finish()


def build_dae(seed: int = 41) -> Graph:
    """Fully-connected autoencoder for anomaly detection on 640-d frames."""
    b = GraphBuilder("dae", seed)
    x = b.input("frame", (1, 640))
    t = x
    for width in (128, 128, 128, 8, 128, 128, 128):
        t = b.requant(b.dense(t, width), per_channel=False)
    recon = b.dense(t, 640, name="fc_out")
    b.output(recon)
    return b.finish()


FIXTURES = {
    "resnet8": build_resnet8,
    "mobilenet": build_mobilenet,
    "dscnn": build_dscnn,
    "dae": build_dae,
}
