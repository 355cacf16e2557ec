"""Mixed causal graph over omic components (plus an optional outcome node)."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import DataError, InvariantError

DIRECTED = "directed"
UNDIRECTED = "undirected"
CONFLICTED = "conflicted"
STATUSES = (DIRECTED, UNDIRECTED, CONFLICTED)


@dataclass
class Edge:
    """One adjacency. For directed edges ``a -> b``; otherwise ``a < b``."""

    a: str
    b: str
    status: str
    coefficient: float | None = None
    provenance: list = field(default_factory=list)

    @property
    def directed(self) -> bool:
        return self.status == DIRECTED

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "status": self.status,
                "coefficient": self.coefficient, "provenance": self.provenance}


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class CausalGraph:
    def __init__(self, nodes: Iterable[str], outcome: str | None = None):
        self.nodes: tuple[str, ...] = tuple(nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise DataError("duplicate node ids")
        if outcome is not None and outcome not in self.nodes:
            raise DataError(f"outcome {outcome!r} is not a node")
        self.outcome = outcome
        self._edges: dict[tuple[str, str], Edge] = {}
        self.repairs: list[dict] = []
        self.notes: dict = {}

    # construction -------------------------------------------------------
    def add_node(self, node: str) -> None:
        if node in self.nodes:
            raise DataError(f"node {node!r} already present")
        self.nodes = self.nodes + (node,)

    def add_edge(self, a: str, b: str, status: str = DIRECTED, coefficient: float | None = None,
                 provenance: list | None = None) -> Edge:
        if a == b:
            raise DataError(f"self-loop on {a!r}")
        for n in (a, b):
            if n not in self.nodes:
                raise DataError(f"unknown node {n!r}")
        if status not in STATUSES:
            raise DataError(f"unknown edge status {status!r}")
        key = _pair(a, b)
        if key in self._edges:
            raise DataError(f"edge {a!r}-{b!r} already present")
        if status != DIRECTED:
            a, b = key
        e = Edge(a, b, status, coefficient, list(provenance or []))
        self._edges[key] = e
        return e

    def remove_edge(self, a: str, b: str) -> Edge:
        return self._edges.pop(_pair(a, b))

    def set_status(self, a: str, b: str, status: str) -> Edge:
        """Change an edge's status; ``a -> b`` gives the direction when directed."""
        e = self._edges[_pair(a, b)]
        e.status = status
        e.a, e.b = (a, b) if status == DIRECTED else _pair(a, b)
        if status != DIRECTED:
            e.coefficient = None
        return e

    def copy(self) -> "CausalGraph":
        return copy.deepcopy(self)

    # queries ------------------------------------------------------------
    def edge(self, a: str, b: str) -> Edge | None:
        return self._edges.get(_pair(a, b))

    def has_directed(self, a: str, b: str) -> bool:
        e = self.edge(a, b)
        return e is not None and e.directed and e.a == a

    @property
    def edges(self) -> list[Edge]:
        return [self._edges[k] for k in sorted(self._edges)]

    def __iter__(self) -> Iterator[Edge]:
        return iter(self.edges)

    def __len__(self) -> int:
        return len(self._edges)

    def directed_edges(self) -> list[tuple[str, str]]:
        return [(e.a, e.b) for e in self.edges if e.directed]

    def nondirected_edges(self) -> list[Edge]:
        return [e for e in self.edges if not e.directed]

    def children(self, node: str) -> list[str]:
        return sorted(e.b for e in self._edges.values() if e.directed and e.a == node)

    def parents(self, node: str) -> list[str]:
        return sorted(e.a for e in self._edges.values() if e.directed and e.b == node)

    def neighbors(self, node: str) -> list[str]:
        out = []
        for (a, b) in self._edges:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def successors(self) -> dict[str, list[str]]:
        succ = {n: [] for n in self.nodes}
        for e in self.edges:
            if e.directed:
                succ[e.a].append(e.b)
        for v in succ.values():
            v.sort()
        return succ

    def predecessors(self) -> dict[str, list[str]]:
        pred = {n: [] for n in self.nodes}
        for e in self.edges:
            if e.directed:
                pred[e.b].append(e.a)
        for v in pred.values():
            v.sort()
        return pred

    # invariants ---------------------------------------------------------
    def check_invariants(self, require_provenance: bool = False) -> None:
        for (a, b), e in self._edges.items():
            if a == b:
                raise InvariantError(f"self-loop on {a}")
            if _pair(e.a, e.b) != (a, b):
                raise InvariantError(f"edge {e.a}-{e.b} stored under wrong key")
        cycle = find_cycle(self.successors())
        if cycle:
            raise InvariantError("directed cycle: " + " -> ".join(cycle))
        if require_provenance:
            for e in self.edges:
                if not e.directed or e.b == self.outcome:
                    continue
                kinds = {(p.get("kind"), bool(p.get("passed"))) for p in e.provenance}
                if ("validity", True) not in kinds or ("orientation", True) not in kinds:
                    raise InvariantError(f"directed edge {e.a}->{e.b} lacks orientation provenance")

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"nodes": list(self.nodes),
             "edges": [e.to_dict() for e in self.edges],
             "repairs": self.repairs}
        if self.outcome is not None:
            d["outcome"] = self.outcome
        if self.notes:
            d["notes"] = self.notes
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CausalGraph":
        try:
            g = cls(d["nodes"], d.get("outcome"))
            for e in d["edges"]:
                coef = e.get("coefficient")
                g.add_edge(e["a"], e["b"], e.get("status", DIRECTED),
                           None if coef is None else float(coef), e.get("provenance", []))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed graph document: {exc}") from None
        g.repairs = list(d.get("repairs", []))
        g.notes = dict(d.get("notes", {}))
        return g

    @classmethod
    def from_json(cls, text: str) -> "CausalGraph":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid graph JSON: {exc}") from None

    @classmethod
    def load(cls, path) -> "CausalGraph":
        try:
            with open(path) as fh:
                return cls.from_json(fh.read())
        except FileNotFoundError:
            raise DataError(f"file not found: {path}") from None


def find_cycle(successors: dict[str, list[str]]) -> list[str] | None:
    """Return one directed cycle as a node list (first node repeated at the end), or None.

    Iterative DFS in sorted node order, so the reported cycle is deterministic.
    """
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in successors}
    parent: dict[str, str] = {}
    for root in sorted(successors):
        if color[root] != WHITE:
            continue
        stack = [(root, iter(successors[root]))]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
            elif color[nxt] == GREY:
                cycle = [nxt]
                cur = node
                while cur != nxt:
                    cycle.append(cur)
                    cur = parent[cur]
                cycle.append(nxt)
                cycle.reverse()
                return cycle
            elif color[nxt] == WHITE:
                parent[nxt] = node
                color[nxt] = GREY
                stack.append((nxt, iter(successors[nxt])))
    return None


def topological_order(successors: dict[str, list[str]]) -> list[str]:
    """Kahn's algorithm with lexicographic tie-breaking; raises on cycles."""
    import heapq
    indeg = {n: 0 for n in successors}
    for vs in successors.values():
        for v in vs:
            indeg[v] += 1
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for v in successors[n]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != len(successors):
        raise InvariantError("graph has a directed cycle")
    return order


def simple_paths(adj: dict[str, list[str]], source: str, target: str | None = None,
                 limit: int | None = None, avoid: frozenset = frozenset()):
    """Yield simple paths from ``source`` in deterministic (adjacency-order) DFS order.

    With ``target`` set, yields paths ending at ``target``; with ``target=None``
    yields maximal paths (those ending at a node with no onward step).
    Raises :class:`PathOverflowError` once more than ``limit`` paths are produced.
    """
    from .errors import PathOverflowError
    count = 0
    path = [source]
    on_path = {source}
    stack = [iter(adj.get(source, ()))]
    extended = [False]
    while stack:
        nxt = next(stack[-1], None)
        if nxt is None:
            if target is None and not extended[-1] and len(path) > 1:
                count += 1
                if limit is not None and count > limit:
                    raise PathOverflowError(limit)
                yield list(path)
            stack.pop()
            extended.pop()
            on_path.discard(path.pop())
            continue
        if nxt in on_path or nxt in avoid:
            continue
        extended[-1] = True
        if target is not None and nxt == target:
            count += 1
            if limit is not None and count > limit:
                raise PathOverflowError(limit)
            yield path + [nxt]
            continue
        path.append(nxt)
        on_path.add(nxt)
        stack.append(iter(adj.get(nxt, ())))
        extended.append(False)
