"""Network parameters and queries over a learned causal graph.

Degrees, effect-blocking steps and hub roles; propagation of an
intervention to its blocking nodes; weighted modules with border nodes;
outcome attachment with a sufficient parent set; path queries that avoid a
node; and the pairwise-correlation network used as a baseline.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .ci import CITester, DataColumns
from .data import Dataset, FeatureMatrix
from .errors import DataError, InvariantError, PathOverflowError
from .graph import DIRECTED, CausalGraph, simple_paths, topological_order

log = logging.getLogger(__name__)

MAX_LISTED_PATHS = 10 ** 5

INFLUENTIAL = "influential"
INFLUENCED = "influenced"
COMBINED = "combined"
ORDINARY = "ordinary"


def _warn_nondirected(graph: CausalGraph, what: str) -> None:
    skipped = graph.nondirected_edges()
    if skipped:
        log.warning("%s ignores %d undirected/conflicted edge(s): %s", what, len(skipped),
                    ", ".join(f"{e.a}-{e.b}" for e in skipped))


@dataclass(frozen=True)
class NodeProfile:
    node: str
    out_degree: int
    in_degree: int
    max_blocking_step: int
    role: str

    @property
    def is_blocking(self) -> bool:
        """Zero out-degree: effects arriving here go no further."""
        return self.out_degree == 0

    @property
    def passes_through(self) -> bool:
        return self.in_degree > 0 and self.out_degree > 0

    def to_dict(self) -> dict:
        return {"node": self.node, "out_degree": self.out_degree, "in_degree": self.in_degree,
                "max_blocking_step": self.max_blocking_step, "role": self.role}


def hub_threshold(degrees: Sequence[int], min_degree: int = 3, percentile: float = 90.0) -> float:
    if not len(degrees):
        return float(min_degree)
    return max(float(min_degree), float(np.percentile(degrees, percentile)))


def longest_paths(successors: dict[str, list[str]]) -> dict[str, int]:
    """Number of edges on the longest directed path leaving each node."""
    try:
        order = topological_order(successors)
    except InvariantError:
        raise InvariantError("cycle in directed subgraph; run acyclicity repair first") from None
    best: dict[str, int] = {}
    for node in reversed(order):
        kids = successors[node]
        best[node] = 1 + max(best[c] for c in kids) if kids else 0
    return best


def node_profiles(graph: CausalGraph, hub_min_degree: int = 3, hub_percentile: float = 90.0) -> list[NodeProfile]:
    """Out/in-degree, max effect-blocking step and hub role of every node."""
    _warn_nondirected(graph, "node_profiles")
    succ, pred = graph.successors(), graph.predecessors()
    depth = longest_paths(succ)
    outs = [len(succ[n]) for n in graph.nodes]
    ins = [len(pred[n]) for n in graph.nodes]
    t_out = hub_threshold(outs, hub_min_degree, hub_percentile)
    t_in = hub_threshold(ins, hub_min_degree, hub_percentile)
    profiles = []
    for n, o, i in zip(graph.nodes, outs, ins):
        hub_out, hub_in = o >= t_out, i >= t_in
        role = COMBINED if hub_out and hub_in else INFLUENTIAL if hub_out else INFLUENCED if hub_in else ORDINARY
        profiles.append(NodeProfile(n, o, i, depth[n], role))
    return profiles


@dataclass
class PropagationReport:
    source: str
    influenced: set[str]
    blocking_nodes: set[str]
    per_path: list[tuple[list[str], int]]
    truncated: bool = False

    def to_dict(self) -> dict:
        return {"source": self.source, "influenced": sorted(self.influenced),
                "blocking_nodes": sorted(self.blocking_nodes),
                "paths": [{"path": p, "blocking_step": s} for p, s in self.per_path],
                "truncated": self.truncated}


def reachable(successors: dict[str, list[str]], source: str) -> set[str]:
    seen, stack = set(), [source]
    while stack:
        for c in successors[stack.pop()]:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    seen.discard(source)
    return seen


def propagate(graph: CausalGraph, source: str, max_paths: int = MAX_LISTED_PATHS) -> PropagationReport:
    """Where an intervention on ``source`` spreads and where it is blocked.

    Each listed path runs from ``source`` to a node with zero out-degree;
    its blocking step is the number of nodes it influences on the way
    (the blocking node included). Path listing stops at ``max_paths`` with
    ``truncated`` set; the reachability sets are always exact.
    """
    if source not in graph.nodes:
        raise DataError(f"unknown node {source!r}")
    _warn_nondirected(graph, "propagate")
    succ = graph.successors()
    influenced = reachable(succ, source)
    blocking = {n for n in influenced if not succ[n]}
    per_path, truncated = [], False
    try:
        for p in simple_paths(succ, source, None, max_paths):
            per_path.append((p, len(p) - 1))
    except PathOverflowError:
        truncated = True
    return PropagationReport(source, influenced, blocking, per_path, truncated)


@dataclass
class ModulePartition:
    modules: list[set[str]]
    border_nodes: set[str]
    quality: float
    cross_edges: list[dict] = field(default_factory=list)

    def module_of(self, node: str) -> int:
        for i, m in enumerate(self.modules):
            if node in m:
                return i
        raise KeyError(node)

    def to_dict(self) -> dict:
        return {"modules": [sorted(m) for m in self.modules],
                "border_nodes": sorted(self.border_nodes),
                "quality": self.quality, "cross_edges": self.cross_edges}


def _weights(graph: CausalGraph) -> dict[tuple[str, str], float]:
    w = {}
    for e in graph.edges:
        key = (e.a, e.b) if e.a < e.b else (e.b, e.a)
        w[key] = 1.0 if e.coefficient is None else abs(e.coefficient)
    return w


def modularity(nodes: Sequence[str], weights: dict[tuple[str, str], float], labels: dict[str, int]) -> float:
    total = sum(weights.values())
    if total <= 0:
        return 0.0
    strength = {n: 0.0 for n in nodes}
    inside = {}
    tot = {}
    for (a, b), w in weights.items():
        strength[a] += w
        strength[b] += w
        if labels[a] == labels[b]:
            inside[labels[a]] = inside.get(labels[a], 0.0) + w
    for n in nodes:
        tot[labels[n]] = tot.get(labels[n], 0.0) + strength[n]
    return sum(inside.get(c, 0.0) / total - (tot[c] / (2 * total)) ** 2 for c in tot)


def detect_modules(graph: CausalGraph, refine: bool = True) -> ModulePartition:
    """Greedy weighted modularity agglomeration on the undirected projection.

    Edge weights are absolute coefficients (1 where none is fitted). Starting
    from singletons in lexicographic order, the pair of adjacent modules with
    the largest modularity gain is merged until no merge helps; ties go to
    the lexicographically smallest pair. A deterministic single-node
    refinement pass then moves nodes to the neighbouring module with the best
    positive gain.
    """
    nodes = sorted(graph.nodes)
    weights = {k: v for k, v in _weights(graph).items() if v > 0}
    total = sum(weights.values())
    label = {n: i for i, n in enumerate(nodes)}
    if total > 0:
        two_m = 2.0 * total
        strength = {n: 0.0 for n in nodes}
        for (a, b), w in weights.items():
            strength[a] += w
            strength[b] += w
        members = {i: {n} for i, n in enumerate(nodes)}
        a_tot = {i: strength[n] / two_m for i, n in enumerate(nodes)}
        between: dict[tuple[int, int], float] = {}
        for (a, b), w in weights.items():
            i, j = sorted((label[a], label[b]))
            between[(i, j)] = between.get((i, j), 0.0) + w / two_m
        while True:
            best, best_key = 1e-12, None
            for (i, j), e in between.items():
                gain = 2.0 * (e - a_tot[i] * a_tot[j])
                key = (min(members[i]), min(members[j]))
                if gain > best + 1e-15 or (best_key is not None and abs(gain - best) <= 1e-15
                                           and key < best_key[0]):
                    best, best_key = gain, (key, i, j)
            if best_key is None:
                break
            _, i, j = best_key
            members[i] |= members.pop(j)
            a_tot[i] += a_tot.pop(j)
            merged = {}
            for (p, q), e in between.items():
                p, q = (i if p == j else p), (i if q == j else q)
                if p == q:
                    continue
                k = (min(p, q), max(p, q))
                merged[k] = merged.get(k, 0.0) + e
            between = merged
        label = {n: i for i, ms in members.items() for n in ms}
        if refine:
            label = _refine(nodes, weights, label)

    groups: dict[int, set[str]] = {}
    for n in nodes:
        groups.setdefault(label[n], set()).add(n)
    modules = sorted(groups.values(), key=min)
    index = {n: i for i, m in enumerate(modules) for n in m}
    border, cross = set(), []
    for e in graph.edges:
        if index[e.a] != index[e.b]:
            border.update((e.a, e.b))
            cross.append({"a": e.a, "b": e.b, "status": e.status,
                          "from_module": index[e.a], "to_module": index[e.b]})
    q = modularity(nodes, weights, index)
    return ModulePartition(modules, border, q, cross)


def _refine(nodes, weights, label, max_rounds: int = 50):
    total = sum(weights.values())
    two_m = 2.0 * total
    adj: dict[str, dict[str, float]] = {n: {} for n in nodes}
    for (a, b), w in weights.items():
        adj[a][b] = adj[a].get(b, 0.0) + w
        adj[b][a] = adj[b].get(a, 0.0) + w
    strength = {n: sum(adj[n].values()) for n in nodes}
    tot: dict[int, float] = {}
    for n in nodes:
        tot[label[n]] = tot.get(label[n], 0.0) + strength[n]
    label = dict(label)
    for _ in range(max_rounds):
        moved = False
        for n in nodes:
            own = label[n]
            links: dict[int, float] = {}
            for m, w in adj[n].items():
                links[label[m]] = links.get(label[m], 0.0) + w
            k = strength[n]
            base_tot = tot[own] - k

            def score(c):
                t = base_tot if c == own else tot[c]
                return links.get(c, 0.0) - k * t / two_m

            stay = score(own)
            best_c, best = own, stay
            for c in sorted(links):
                if c == own:
                    continue
                s = score(c)
                if s > best + 1e-12:
                    best_c, best = c, s
            if best_c != own:
                tot[own] -= k
                tot[best_c] += k
                label[n] = best_c
                moved = True
        if not moved:
            break
    return label


@dataclass
class CorrelationNetwork:
    nodes: tuple[str, ...]
    edges: list[tuple[str, str, float]]
    threshold: float

    def pairs(self) -> set[frozenset]:
        return {frozenset((a, b)) for a, b, _ in self.edges}


def correlation_network(data, threshold: float) -> CorrelationNetwork:
    """Edges between omic features whose |Pearson r| reaches ``threshold``."""
    feats = data.omics if isinstance(data, Dataset) else data
    if not isinstance(feats, FeatureMatrix):
        raise TypeError("expected a Dataset or FeatureMatrix")
    x = feats.values - feats.values.mean(axis=0)
    norms = np.sqrt((x ** 2).sum(axis=0))
    r = np.clip((x.T @ x) / np.outer(norms, norms), -1.0, 1.0)
    # identical columns land a few ulps short of 1; keep them at the threshold 1.0
    r[np.abs(np.abs(r) - 1.0) < 1e-12] = np.sign(r[np.abs(np.abs(r) - 1.0) < 1e-12])
    names = feats.features
    edges = []
    for i, j in itertools.combinations(range(len(names)), 2):
        if abs(r[i, j]) >= threshold:
            edges.append((names[i], names[j], float(r[i, j])))
    return CorrelationNetwork(tuple(names), edges, threshold)


def correlation_threshold(alpha: float, n: int) -> float:
    """|r| at which a marginal Fisher-z test at ``alpha`` starts to reject."""
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    return math.tanh(z / math.sqrt(n - 3))


def attach_outcome(graph: CausalGraph, data: Dataset, outcome: str, alpha: float = 0.01,
                   max_cond_size: int = 3) -> CausalGraph:
    """Add ``outcome`` as a terminal node whose parents form a sufficient set.

    Candidates are the omic nodes; a candidate is dropped once it is
    independent of the outcome given some set of other surviving candidates
    (sizes 0..``max_cond_size``). Grow/shrink passes then enforce that every
    non-parent is independent of the outcome given the full parent set. The
    final tests are stored in ``notes["outcome"]``.
    """
    if data.outcome is None or data.outcome_name != outcome:
        raise DataError(f"dataset has no outcome column {outcome!r}")
    if outcome in graph.nodes:
        raise DataError(f"graph already has a node named {outcome!r}")
    tester = CITester(DataColumns.from_dataset(data), alpha)
    candidates = sorted(n for n in graph.nodes if n in data.omics.features)
    alive = list(candidates)
    for size in range(max_cond_size + 1):
        if len(alive) - 1 < size:
            break
        drop = []
        for c in alive:
            others = [x for x in alive if x != c]
            for s in itertools.combinations(others, size):
                if tester.independent(c, outcome, s):
                    drop.append(c)
                    break
        alive = [c for c in alive if c not in drop]

    parents = set(alive)
    for _ in range(2 * len(candidates) + 2):
        changed = False
        for z in candidates:
            if z not in parents and not tester.independent(z, outcome, sorted(parents)):
                parents.add(z)
                changed = True
        for p in sorted(parents):
            if tester.independent(p, outcome, sorted(parents - {p})):
                parents.discard(p)
                changed = True
        if not changed:
            break

    sufficiency = [tester.test(z, outcome, sorted(parents)) for z in candidates if z not in parents]
    out = graph.copy()
    out.add_node(outcome)
    out.outcome = outcome
    for p in sorted(parents):
        t = tester.test(p, outcome, sorted(parents - {p}))
        out.add_edge(p, outcome, DIRECTED, provenance=[{"kind": "outcome", "passed": True,
                                                        "test": t.to_dict()}])
    ok = all(t.independent for t in sufficiency)
    if not ok:
        log.warning("outcome parent set not sufficient for %d node(s)",
                    sum(not t.independent for t in sufficiency))
    out.notes["outcome"] = {"name": outcome, "sufficient_set": sorted(parents), "sufficient": ok,
                            "sufficiency_tests": [t.to_dict() for t in sufficiency]}
    return out


def paths_avoiding(graph: CausalGraph, source: str, target: str, excluded: str,
                   max_paths: int = MAX_LISTED_PATHS) -> list[list[str]]:
    """Directed ``source -> target`` paths that do not pass through ``excluded``."""
    for n in (source, target, excluded):
        if n not in graph.nodes:
            raise DataError(f"unknown node {n!r}")
    if len({source, target, excluded}) != 3:
        raise ValueError("source, target and excluded must be distinct")
    return list(simple_paths(graph.successors(), source, target, max_paths, frozenset({excluded})))
