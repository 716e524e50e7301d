"""Pattern dispatch: match module pattern tables against the graph, cost
every supporting module through the DSE, and partition the graph into
accelerated fused regions plus per-node host fallbacks.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dse import CostBreakdown, Schedule, SearchLimits, search_best
from .ir import Graph, value_specs
from .patterns import anchor_features, eval_clauses, find_occurrences
from .target import TargetModel
from .workload import Workload, extract_workload


@dataclass(frozen=True)
class MatchCandidate:
    pattern: str
    module: str
    node_ids: tuple[str, ...]

    @property
    def anchor(self) -> str:
        return self.node_ids[0]


@dataclass
class DispatchDecision:
    node_ids: tuple[str, ...]
    module: str | None = None    # None -> host fallback
    pattern: str | None = None
    workload: Workload | None = None
    schedule: Schedule | None = None
    cost: CostBreakdown | None = None

    @property
    def assigned(self) -> bool:
        return self.module is not None


@dataclass
class PartitionedGraph:
    graph: Graph
    decisions: list[DispatchDecision]

    def total_cycles(self) -> int:
        return sum(d.cost.total for d in self.decisions if d.assigned)


def check_constraints(candidate: MatchCandidate, g: Graph, target: TargetModel) -> bool:
    specs = value_specs(g)
    nodes_by_id = g.node_map()
    chain = [nodes_by_id[i] for i in candidate.node_ids]
    module = target.module(candidate.module)
    pattern = module.pattern(candidate.pattern)
    return eval_clauses(pattern.where, anchor_features(chain, g, specs))


def match_candidates(g: Graph, target: TargetModel) -> list[MatchCandidate]:
    """Constraint-checked pattern occurrences across all modules, with
    candidates strictly contained in a larger valid one removed."""
    specs = value_specs(g)
    nodes_by_id = g.node_map()
    raw: list[MatchCandidate] = []
    for module in target.modules:
        for pattern in module.patterns:
            for occ in find_occurrences(g, specs, pattern):
                chain = [nodes_by_id[i] for i in occ.node_ids]
                if eval_clauses(pattern.where, anchor_features(chain, g, specs)):
                    raw.append(MatchCandidate(pattern.name, module.name, occ.node_ids))
    kept = []
    node_sets = [set(c.node_ids) for c in raw]
    for i, cand in enumerate(raw):
        contained = any(node_sets[i] < node_sets[j] for j in range(len(raw)) if j != i)
        if not contained:
            kept.append(cand)
    return kept


def dispatch(g: Graph, target: TargetModel, dse=search_best,
             mode: str = "exhaustive", limits: SearchLimits | None = None) -> PartitionedGraph:
    """Assign each fused region to the module with minimum predicted latency
    (ties: module order); regions no module can take degrade to fallback."""
    candidates = match_candidates(g, target)
    topo_index = {n.id: i for i, n in enumerate(g.nodes)}
    module_order = {m.name: i for i, m in enumerate(target.modules)}
    nodes_by_id = g.node_map()

    groups: dict[tuple[str, ...], list[MatchCandidate]] = {}
    for cand in candidates:
        groups.setdefault(cand.node_ids, []).append(cand)
    ordered = sorted(groups, key=lambda ids: (topo_index[ids[0]], -len(ids), ids))

    taken: set[str] = set()
    decisions: list[DispatchDecision] = []
    memo: dict = {}  # identical layers recur; the search is deterministic
    for node_ids in ordered:
        if any(nid in taken for nid in node_ids):
            continue
        bids = sorted(groups[node_ids], key=lambda c: module_order[c.module])
        best = None
        for cand in bids:
            module = target.module(cand.module)
            chain_ops = tuple(nodes_by_id[i].op for i in cand.node_ids)
            wl = extract_workload(nodes_by_id[cand.anchor], chain_ops, g, module,
                                  cand.pattern)
            key = (cand.module, cand.pattern, wl.kind, wl.dims, wl.real_dims,
                   wl.spatial, wl.strides, wl.dilation, wl.groups, wl.tail)
            if key in memo:
                res = memo[key]
            else:
                res = memo[key] = dse(wl, module, mode=mode, limits=limits)
            if res is None:
                continue
            schedule, cost = res
            if best is None or cost.total < best[0]:
                best = (cost.total, cand, wl, schedule, cost)
        if best is None:
            continue  # no module can take it; nodes fall back individually
        _, cand, wl, schedule, cost = best
        decisions.append(DispatchDecision(node_ids, cand.module, cand.pattern,
                                          wl, schedule, cost))
        taken.update(node_ids)

    for node in g.nodes:
        if node.id not in taken:
            decisions.append(DispatchDecision((node.id,)))
    return partition_graph(g, decisions)


def partition_graph(g: Graph, decisions: list[DispatchDecision]) -> PartitionedGraph:
    """Order decisions topologically and check exact node coverage."""
    covered: list[str] = [nid for d in decisions for nid in d.node_ids]
    if len(covered) != len(set(covered)) or set(covered) != {n.id for n in g.nodes}:
        raise AssertionError("dispatch decisions must cover every node exactly once")
    topo_index = {n.id: i for i, n in enumerate(g.nodes)}
    decisions = sorted(decisions, key=lambda d: topo_index[d.node_ids[-1]])
    return PartitionedGraph(g, decisions)


def dispatch_report(pg: PartitionedGraph) -> list[dict]:
    from .dse import schedule_digest
    out = []
    for d in pg.decisions:
        entry = {"nodes": list(d.node_ids)}
        if d.assigned:
            entry.update(module=d.module, pattern=d.pattern,
                         predicted_cycles=d.cost.total,
                         schedule=schedule_digest(d.schedule))
        else:
            entry.update(module="fallback", predicted_cycles=0)
        out.append(entry)
    return out
