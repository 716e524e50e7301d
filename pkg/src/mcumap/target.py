"""Declarative hardware targets: execution modules, pattern tables, memory
hierarchies, spatial unrollings, cost constants and API name bindings.

Built-in targets: "diana" (16x16 digital MAC array, separate weight memory,
synchronous DMA) and "gap9" (8-core cluster + NE16 accelerator sharing one
L1, asynchronous DMA with double buffering).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .ir import ConfigError, NCHW, NHWC

OPERANDS = ("I", "W", "O")
DIM_NAMES = ("K", "C", "OY", "OX", "FY", "FX")

GENERIC_PLATFORM_APIS = ("match_platform_init", "match_platform_close", "match_trace_copy")
GENERIC_MEM_APIS = ("match_mem_alloc_l1", "match_mem_free_l1", "match_mem_copy")
GENERIC_SYNC_APIS = ("match_sync_transfers", "match_sync_compute")


@dataclass(frozen=True)
class MemoryLevel:
    name: str
    size: int
    operands: tuple[str, ...]
    bandwidth: int = 8          # bytes/cycle toward the level below
    chunk_overhead: int = 0     # cycles per contiguous chunk transferred
    shared: bool = True


@dataclass(frozen=True)
class SpatialMapping:
    unrolls: dict[str, int] = field(default_factory=dict)
    policy: str = "pad_or_reduce"  # or "pad_only"


@dataclass(frozen=True)
class PatternSpec:
    name: str
    ops: tuple[str, ...]
    where: tuple = ()  # clauses (field, operator, value)


@dataclass(frozen=True)
class CostConstants:
    model: str                       # diana | gap9_cluster | ne16
    composition: str                 # sync_sum | async_max
    constants: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ModuleTransforms:
    # hard alignment requirements handled by graph padding, per anchor op
    padding: dict[str, dict[str, int]] = field(default_factory=dict)
    weight_layout: str | None = None
    weight_layout_axes: tuple[int, ...] | None = None  # permutation of (K, C, FY, FX)
    # backend-library workspace reserved in L1 (0 disables); conv anchors only
    scratch_model: str = "none"      # none | im2col
    scratch_cores: int = 0


@dataclass
class ExecModule:
    name: str
    patterns: list[PatternSpec]
    memory_levels: list[MemoryLevel]  # innermost (L1) first
    spatial: SpatialMapping
    cost: CostConstants
    transforms: ModuleTransforms
    api_bindings: dict[str, dict[str, str]]

    def levels_for(self, operand: str) -> list[MemoryLevel]:
        return [lvl for lvl in self.memory_levels if operand in lvl.operands]

    def pattern(self, name: str) -> PatternSpec:
        for p in self.patterns:
            if p.name == name:
                return p
        raise KeyError(name)

    def binding(self, generic: str) -> str:
        for family in self.api_bindings.values():
            if generic in family:
                return family[generic]
        raise KeyError(generic)


@dataclass
class TargetModel:
    name: str
    modules: list[ExecModule]
    activation_layout: str = NHWC
    host: str = "host-cpu"

    def module(self, name: str) -> ExecModule:
        for m in self.modules:
            if m.name == name:
                return m
        raise KeyError(name)


def validate_target(t: TargetModel) -> None:
    names = [m.name for m in t.modules]
    if len(set(names)) != len(names):
        raise ConfigError(f"target {t.name}: duplicate module names {names}")
    if t.activation_layout not in (NCHW, NHWC):
        raise ConfigError(f"target {t.name}: activation layout {t.activation_layout!r}")
    for m in t.modules:
        if not m.patterns:
            raise ConfigError(f"module {m.name}: empty pattern table")
        if not m.memory_levels:
            raise ConfigError(f"module {m.name}: no memory levels")
        for lvl in m.memory_levels:
            if lvl.size <= 0 or lvl.bandwidth <= 0 or lvl.chunk_overhead < 0:
                raise ConfigError(f"module {m.name}: bad memory level {lvl.name}")
            if not lvl.operands or any(o not in OPERANDS for o in lvl.operands):
                raise ConfigError(f"module {m.name}: level {lvl.name} serves {lvl.operands}")
        for op in OPERANDS:
            if not m.levels_for(op):
                raise ConfigError(f"module {m.name}: operand {op} served by no level")
        for dim, u in m.spatial.unrolls.items():
            if dim not in DIM_NAMES or u < 1:
                raise ConfigError(f"module {m.name}: bad spatial unroll {dim}={u}")
        if m.spatial.policy not in ("pad_only", "pad_or_reduce"):
            raise ConfigError(f"module {m.name}: bad adaptation policy {m.spatial.policy!r}")
        if m.cost.composition not in ("sync_sum", "async_max"):
            raise ConfigError(f"module {m.name}: bad composition {m.cost.composition!r}")
        if any(v < 0 for v in m.cost.constants.values()):
            raise ConfigError(f"module {m.name}: negative cost constant")
        required = list(GENERIC_PLATFORM_APIS + GENERIC_MEM_APIS + GENERIC_SYNC_APIS)
        required += [f"match_kernel_{p.name}" for p in m.patterns]
        bound = {g for fam in m.api_bindings.values() for g in fam}
        for generic in required:
            if generic not in bound:
                raise ConfigError(f"module {m.name}: missing API binding for {generic!r}")


# ---------------------------------------------------------------------------
# Built-in targets
# ---------------------------------------------------------------------------

def _bindings(prefix: str, patterns: list[PatternSpec], overrides: dict | None = None) -> dict:
    b = {
        "platform": {
            "match_platform_init": f"{prefix}_init",
            "match_platform_close": f"{prefix}_close",
            "match_trace_copy": f"{prefix}_trace_copy",
        },
        "mem": {
            "match_mem_alloc_l1": f"{prefix}_l1_malloc",
            "match_mem_free_l1": f"{prefix}_l1_free",
            "match_mem_copy": f"{prefix}_dma_2d",
        },
        "sync": {
            "match_sync_transfers": f"{prefix}_dma_wait",
            "match_sync_compute": f"{prefix}_barrier",
        },
        "compute": {f"match_kernel_{p.name}": f"{prefix}_{p.name}" for p in patterns},
    }
    for family, entries in (overrides or {}).items():
        b[family].update(entries)
    return b


def _conv_tails(base: str) -> list[tuple[str, tuple[str, ...]]]:
    return [
        (f"{base}_bias_requant", (base, "bias_add", "requant")),
        (f"{base}_requant", (base, "requant")),
        (base, (base,)),
    ]


def build_diana() -> TargetModel:
    where_conv = (
        ("dtype", "=", "i8"), ("layout", "=", NCHW), ("batch", "=", 1),
        ("DX", "=", 1), ("DY", "=", 1), ("group_kind", "in", ("none", "depthwise")),
    )
    where_dense = (("dtype", "=", "i8"), ("batch", "=", 1))
    patterns = [PatternSpec(n, ops, where_conv) for n, ops in _conv_tails("conv2d")]
    patterns += [PatternSpec(n, ops, where_dense) for n, ops in _conv_tails("dense")]
    module = ExecModule(
        name="digital",
        patterns=patterns,
        memory_levels=[
            MemoryLevel("l1_act", 256 * 1024, ("I", "O"), bandwidth=8, chunk_overhead=0),
            MemoryLevel("l1_wt", 64 * 1024, ("W",), bandwidth=8, chunk_overhead=0),
            MemoryLevel("l2", 512 * 1024, ("I", "W", "O"), bandwidth=8, chunk_overhead=70),
        ],
        spatial=SpatialMapping({"K": 16, "OX": 16}, policy="pad_only"),
        cost=CostConstants("diana", "sync_sum",
                           {"c_read": 1, "c_mac": 1, "c_write": 1, "c_elem": 23}),
        transforms=ModuleTransforms(
            padding={"conv2d": {"K": 16, "OX": 16}, "dense": {"K": 16}}),
        api_bindings=_bindings("diana", patterns),
    )
    t = TargetModel("diana", [module], activation_layout=NCHW)
    validate_target(t)
    return t


def build_gap9() -> TargetModel:
    where_any_conv = (
        ("dtype", "=", "i8"), ("layout", "=", NHWC), ("batch", "=", 1),
        ("DX", "=", 1), ("DY", "=", 1), ("group_kind", "in", ("none", "depthwise")),
    )
    where_dense = (("dtype", "=", "i8"), ("batch", "=", 1))
    where_add = (("dtype", "=", "i8"), ("batch", "=", 1),
                 ("layout", "in", (NHWC, "none")))
    cluster_patterns = [PatternSpec(n, ops, where_any_conv) for n, ops in _conv_tails("conv2d")]
    cluster_patterns += [PatternSpec(n, ops, where_dense) for n, ops in _conv_tails("dense")]
    cluster_patterns += [
        PatternSpec("add_requant", ("add", "requant"), where_add),
        PatternSpec("add", ("add",), where_add),
    ]
    shared_l1 = dict(size=128 * 1024, operands=("I", "W", "O"), bandwidth=8, chunk_overhead=0)
    l2 = dict(size=3 * 512 * 1024, operands=("I", "W", "O"), bandwidth=8, chunk_overhead=27)
    cluster = ExecModule(
        name="cluster",
        patterns=cluster_patterns,
        memory_levels=[MemoryLevel("l1", **shared_l1), MemoryLevel("l2", **l2)],
        spatial=SpatialMapping({"OX": 2, "K": 4, "OY": 8}, policy="pad_or_reduce"),
        cost=CostConstants("gap9_cluster", "async_max", {"c_inner": 2, "c_setup": 200}),
        transforms=ModuleTransforms(scratch_model="im2col", scratch_cores=8),
        api_bindings=_bindings("pulp_cluster", cluster_patterns),
    )
    # square 1x1 / 3x3 convolutions only; no dense support in the kernel library
    where_ne16 = where_any_conv + (
        ("FX", "in", (1, 3)), ("FY", "in", (1, 3)), ("square", "=", True),
        ("SX", "in", (1, 2)), ("SY", "in", (1, 2)),
    )
    ne16_patterns = [PatternSpec(n, ops, where_ne16) for n, ops in _conv_tails("conv2d")]
    ne16 = ExecModule(
        name="ne16",
        patterns=ne16_patterns,
        memory_levels=[MemoryLevel("l1", **shared_l1), MemoryLevel("l2", **l2)],
        spatial=SpatialMapping({}, policy="pad_or_reduce"),
        cost=CostConstants("ne16", "async_max",
                           {"c_block_3x3": 59, "c_block_1x1": 27, "c_setup": 300}),
        transforms=ModuleTransforms(weight_layout="ne16_weight",
                                    weight_layout_axes=(2, 3, 0, 1)),
        api_bindings=_bindings("ne16", ne16_patterns),
    )
    t = TargetModel("gap9", [ne16, cluster], activation_layout=NHWC)
    validate_target(t)
    return t


BUILTIN_TARGETS = {"diana": build_diana, "gap9": build_gap9}


# ---------------------------------------------------------------------------
# Config documents
# ---------------------------------------------------------------------------

def _module_from_doc(doc: dict) -> ExecModule:
    def need(key):
        if key not in doc:
            raise ConfigError(f"module config: missing {key!r}")
        return doc[key]

    patterns = []
    for p in need("patterns"):
        patterns.append(PatternSpec(
            name=p["name"],
            ops=tuple(p["ops"]),
            where=tuple((c[0], c[1], tuple(c[2]) if isinstance(c[2], list) else c[2])
                        for c in p.get("where", [])),
        ))
    levels = []
    for lvl in need("memory"):
        levels.append(MemoryLevel(
            name=lvl["name"],
            size=int(lvl["size_bytes"]),
            operands=tuple(lvl.get("operands", OPERANDS)),
            bandwidth=int(lvl.get("bandwidth_bytes_per_cycle", 8)),
            chunk_overhead=int(lvl.get("chunk_overhead_cycles", 0)),
            shared=bool(lvl.get("shared", True)),
        ))
    spatial_doc = doc.get("spatial", {})
    spatial = SpatialMapping(
        unrolls={k: int(v) for k, v in spatial_doc.get("unrolls", {}).items()},
        policy=spatial_doc.get("policy", "pad_or_reduce"),
    )
    cost_doc = need("cost")
    cost = CostConstants(
        model=cost_doc["model"],
        composition=cost_doc.get("composition", "sync_sum"),
        constants={k: int(v) for k, v in cost_doc.get("constants", {}).items()},
    )
    tr = doc.get("transforms", {})
    transforms = ModuleTransforms(
        padding={op: {d: int(m) for d, m in mults.items()}
                 for op, mults in tr.get("padding", {}).items()},
        weight_layout=tr.get("weight_layout"),
        weight_layout_axes=tuple(tr["weight_layout_axes"]) if "weight_layout_axes" in tr else None,
        scratch_model=tr.get("scratch_model", "none"),
        scratch_cores=int(tr.get("scratch_cores", 0)),
    )
    api = {fam: dict(entries) for fam, entries in doc.get("api", {}).items()}
    return ExecModule(doc["name"], patterns, levels, spatial, cost, transforms, api)


def target_from_doc(doc: dict, name: str) -> TargetModel:
    modules = [_module_from_doc(m) for m in doc.get("module", doc.get("modules", []))]
    t = TargetModel(
        name=doc.get("name", name),
        modules=modules,
        activation_layout=doc.get("activation_layout", NHWC),
    )
    validate_target(t)
    return t


def target_to_doc(t: TargetModel) -> dict:
    """Config-document form of a target (inverse of target_from_doc); handy
    for deriving custom variants from the built-ins."""
    modules = []
    for m in t.modules:
        tr = {}
        if m.transforms.padding:
            tr["padding"] = {op: dict(mults) for op, mults in m.transforms.padding.items()}
        if m.transforms.weight_layout:
            tr["weight_layout"] = m.transforms.weight_layout
            tr["weight_layout_axes"] = list(m.transforms.weight_layout_axes)
        if m.transforms.scratch_model != "none":
            tr["scratch_model"] = m.transforms.scratch_model
            tr["scratch_cores"] = m.transforms.scratch_cores
        modules.append({
            "name": m.name,
            "patterns": [
                {"name": p.name, "ops": list(p.ops),
                 "where": [[f, op, list(v) if isinstance(v, tuple) else v]
                           for f, op, v in p.where]}
                for p in m.patterns
            ],
            "memory": [
                {"name": lvl.name, "size_bytes": lvl.size,
                 "operands": list(lvl.operands),
                 "bandwidth_bytes_per_cycle": lvl.bandwidth,
                 "chunk_overhead_cycles": lvl.chunk_overhead,
                 "shared": lvl.shared}
                for lvl in m.memory_levels
            ],
            "spatial": {"unrolls": dict(m.spatial.unrolls), "policy": m.spatial.policy},
            "cost": {"model": m.cost.model, "composition": m.cost.composition,
                     "constants": dict(m.cost.constants)},
            "transforms": tr,
            "api": {fam: dict(entries) for fam, entries in m.api_bindings.items()},
        })
    return {"name": t.name, "activation_layout": t.activation_layout,
            "module": modules}


def load_target(source: str) -> TargetModel:
    """Built-in target name, or a path to a JSON/TOML target description."""
    if source in BUILTIN_TARGETS:
        return BUILTIN_TARGETS[source]()
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"unknown target {source!r} (not built-in, not a file)")
    if path.suffix == ".toml":
        import tomllib
        doc = tomllib.loads(path.read_text())
    elif path.suffix == ".json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"target config {path}: {e}") from e
    else:
        raise ConfigError(f"target config {path}: expected .json or .toml")
    return target_from_doc(doc, path.stem)
