"""Network learning: CI-pruned skeleton over omic nodes, then instrument-based orientation.

Skeleton search conditions only on omic components, never on instruments:
conditioning on a genetic instrument cannot explain away dependence between
two components, so instruments are kept out of separating sets entirely.
Orientation uses instruments the other way round. An instrument allocated
to ``M_i`` that is dependent on ``M_i`` but independent of ``M_j`` given
``M_i`` is evidence for ``M_i -> M_j``. When that test fails, sets made of
one more skeleton neighbour are tried alongside ``M_i`` to close back-door
routes into ``M_j``; this cannot create evidence for the wrong direction.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .ci import CITester, DataColumns
from .config import RunConfig
from .data import Dataset
from .errors import ConditioningError, DataError, InvariantError
from .graph import CONFLICTED, DIRECTED, UNDIRECTED, CausalGraph, find_cycle
from .instruments import Allocation, InstrumentSet, ValidityResult, validity_check

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeparationRecord:
    a: str
    b: str
    separating_set: tuple[str, ...]
    p_value: float

    def to_dict(self) -> dict:
        return {"pair": [self.a, self.b], "separating_set": list(self.separating_set),
                "p_value": self.p_value}


@dataclass
class Skeleton:
    nodes: tuple[str, ...]
    adjacency: dict[str, set]
    separations: list[SeparationRecord] = field(default_factory=list)

    def edges(self) -> list[tuple[str, str]]:
        return sorted((a, b) for a in self.adjacency for b in self.adjacency[a] if a < b)

    def separating_set(self, a: str, b: str) -> tuple[str, ...] | None:
        for rec in self.separations:
            if {rec.a, rec.b} == {a, b}:
                return rec.separating_set
        return None


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def learn_skeleton(
    tester: CITester,
    nodes: Sequence[str],
    max_cond_size: int = 3,
    bonferroni: bool = False,
    threads: int = 1,
) -> Skeleton:
    """PC-style skeleton search.

    Starting from the complete graph, level ``s`` tests every remaining edge
    against conditioning sets of size ``s`` drawn from the neighbours of
    either endpoint, as they stood at the start of the level. The first
    independence removes the edge. Candidate sets are enumerated in
    lexicographic order and removals are applied between levels, which
    makes the result independent of scheduling.
    """
    if max_cond_size < 0:
        raise ValueError("max_cond_size must be >= 0")
    nodes = tuple(sorted(nodes))
    kinds = tester.columns.kinds
    bad = [n for n in nodes if kinds.get(n, "omic") != "omic"]
    if bad:
        raise InvariantError(f"non-omic columns offered as skeleton nodes: {bad}")
    adj = {n: set(nodes) - {n} for n in nodes}
    seps: list[SeparationRecord] = []

    for size in range(max_cond_size + 1):
        snap = {n: frozenset(v) for n, v in adj.items()}
        work = []
        for a, b in sorted((a, b) for a in nodes for b in adj[a] if a < b):
            cand = sorted((snap[a] | snap[b]) - {a, b})
            if len(cand) >= size:
                work.append((a, b, cand))
        if not work:
            break

        def search(item, size=size):
            a, b, cand = item
            subsets = list(itertools.combinations(cand, size))
            alpha = tester.alpha / len(subsets) if bonferroni else None
            for s in subsets:
                try:
                    res = tester.test(a, b, s, alpha)
                except ConditioningError as exc:
                    raise ConditioningError(f"edge {a}-{b} given {list(s)}: {exc}") from exc
                if res.independent:
                    return SeparationRecord(a, b, tuple(s), res.p_value)
            return None

        for rec in _map(search, work, threads):
            if rec is not None:
                adj[rec.a].discard(rec.b)
                adj[rec.b].discard(rec.a)
                seps.append(rec)

    iv_ids = {n for n, k in kinds.items() if k == "iv"}
    for rec in seps:
        if iv_ids.intersection(rec.separating_set):
            raise InvariantError(f"separating set for {rec.a}-{rec.b} contains an instrument")
    return Skeleton(nodes, adj, seps)


@dataclass
class Orientation:
    a: str
    b: str
    status: str
    source: str | None
    target: str | None
    votes: dict
    checks: list[ValidityResult]
    margin: float | None

    def provenance(self, min_votes: int) -> list[dict]:
        entries = [c.to_dict() for c in self.checks]
        entries.append({"kind": "orientation", "rule": "iv_exclusion", "votes": self.votes,
                        "min_votes": min_votes, "status": self.status,
                        "passed": self.status == DIRECTED})
        return entries


def orient_pairwise(
    tester: CITester,
    a: str,
    b: str,
    allocation: Allocation,
    min_votes: int = 1,
    bonferroni: bool = False,
    blockers: Sequence[str] = (),
    max_blockers: int = 0,
) -> Orientation:
    """Orient one skeleton edge by counting admissible instruments on each side.

    ``a -> b`` when at least ``min_votes`` instruments of ``a`` pass the
    validity check for ``a -> b`` and none of ``b`` passes for ``b -> a``;
    symmetric for the reverse. Evidence on both sides is a conflict; none on
    either side leaves the edge undirected.

    ``blockers`` (omic nodes, typically skeleton neighbours of ``a`` or
    ``b``) supply extra conditioning sets of up to ``max_blockers`` nodes for
    the exclusion test; see :func:`validity_check`.
    """
    checks: list[ValidityResult] = []
    passing = {}
    pool = sorted(set(blockers) - {a, b})
    extra = [s for k in range(1, max_blockers + 1) for s in itertools.combinations(pool, k)]
    for exposure, response in ((a, b), (b, a)):
        ivs = allocation.ivs_for(exposure)
        alpha = tester.alpha / len(ivs) if (bonferroni and ivs) else None
        results = [validity_check(tester, iv.iv, exposure, response, alpha, extra) for iv in ivs]
        checks.extend(results)
        passing[exposure] = [r for r in results if r.passed]
    ea, eb = len(passing[a]), len(passing[b])
    votes = {f"{a}->{b}": ea, f"{b}->{a}": eb}
    if ea >= min_votes and eb == 0:
        src, dst = a, b
    elif eb >= min_votes and ea == 0:
        src, dst = b, a
    else:
        status = CONFLICTED if (ea and eb) else UNDIRECTED
        return Orientation(a, b, status, None, None, votes, checks, None)
    margin = min(r.margin() for r in passing[src])
    return Orientation(a, b, DIRECTED, src, dst, votes, checks, margin)


def repair_cycles(graph: CausalGraph, margins: dict[tuple[str, str], float]) -> list[dict]:
    """Demote the weakest directed edge of each cycle to ``conflicted`` until acyclic.

    ``margins`` maps directed ``(source, target)`` to orientation strength;
    the smallest margin on a cycle loses, ties going to the lexicographically
    first edge.
    """
    events = []
    while True:
        cycle = find_cycle(graph.successors())
        if cycle is None:
            return events
        edges = list(zip(cycle[:-1], cycle[1:]))
        weakest = min(edges, key=lambda e: (margins.get(e, float("-inf")), e))
        edge = graph.set_status(*weakest, CONFLICTED)
        event = {"action": "demoted_to_conflicted", "edge": list(weakest), "cycle": cycle,
                 "margin": margins.get(weakest)}
        edge.provenance.append({"kind": "repair", **event})
        graph.repairs.append(event)
        events.append(event)
        log.info("cycle repair: %s -> %s demoted (margin %s)", *weakest, event["margin"])


@dataclass
class LearnResult:
    graph: CausalGraph
    skeleton: Skeleton
    tester: CITester

    @property
    def separations(self) -> list[SeparationRecord]:
        return self.skeleton.separations

    def audit_jsonl(self) -> str:
        return self.tester.audit_jsonl()


def learn_network(
    dataset: Dataset,
    ivs: InstrumentSet,
    allocation: Allocation,
    config: RunConfig | None = None,
) -> LearnResult:
    """Skeleton, orientation and acyclicity repair over the dataset's omic components."""
    config = config or RunConfig()
    nodes = tuple(dataset.omics.features)
    need = max(config.max_cond_size, 1) + 4
    if dataset.n_samples < need:
        raise DataError(f"{dataset.n_samples} samples; need at least {need} for "
                        f"conditioning sets up to size {max(config.max_cond_size, 1)}")
    tester = CITester(DataColumns.from_dataset(dataset, ivs), config.alpha)
    skeleton = learn_skeleton(tester, nodes, config.max_cond_size, config.bonferroni, config.threads)

    pairs = skeleton.edges()
    orientations = _map(
        lambda p: orient_pairwise(tester, p[0], p[1], allocation, config.min_votes, config.bonferroni,
                                  skeleton.adjacency[p[0]] | skeleton.adjacency[p[1]],
                                  config.orient_cond_size),
        pairs, config.threads)

    graph = CausalGraph(nodes)
    margins = {}
    for (a, b), o in zip(pairs, orientations):
        prov = [{"kind": "skeleton", "test": tester.test(a, b).to_dict()}]
        prov += o.provenance(config.min_votes)
        if o.status == DIRECTED:
            graph.add_edge(o.source, o.target, DIRECTED, provenance=prov)
            margins[(o.source, o.target)] = o.margin
        else:
            graph.add_edge(a, b, o.status, provenance=prov)
    repair_cycles(graph, margins)
    graph.check_invariants(require_provenance=True)
    conflicted = [f"{e.a}-{e.b}" for e in graph.edges if e.status == CONFLICTED]
    if conflicted:
        log.warning("%d conflicted edges: %s", len(conflicted), ", ".join(conflicted))
    return LearnResult(graph, skeleton, tester)
