"""mcumap: ahead-of-time compiler mapping integer-quantized CNN graphs onto
heterogeneous microcontroller targets with analytical latency models."""

from .ir import (
    CompileError, ConfigError, Graph, GraphParseError, GraphSchemaError,
    GraphStructureError, Node, TensorSpec, parse_graph, serialize_graph,
    validate_graph,
)
from .interp import interpret_graph
from .passes import (
    apply_module_transforms, fold_constants_and_dce, rewrite_requant,
    transform_layout,
)
from .target import ExecModule, MemoryLevel, TargetModel, load_target
from .dispatch import MatchCandidate, PartitionedGraph, dispatch, match_candidates
from .dse import Schedule, CostBreakdown, SearchLimits, search_best

__version__ = "0.1.0"

__all__ = [
    "CompileError", "ConfigError", "CostBreakdown", "ExecModule", "Graph",
    "GraphParseError", "GraphSchemaError", "GraphStructureError",
    "MatchCandidate", "MemoryLevel", "Node", "PartitionedGraph", "Schedule",
    "SearchLimits", "TargetModel", "TensorSpec", "apply_module_transforms",
    "dispatch", "fold_constants_and_dce", "interpret_graph", "load_target",
    "match_candidates", "parse_graph", "rewrite_requant", "search_best",
    "serialize_graph", "transform_layout", "validate_graph",
]
