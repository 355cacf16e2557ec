"""Linear effect sizes over a learned graph: coefficients, path effects, confounders, mediators."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DataError
from .graph import CausalGraph, simple_paths
from .synth import SemSpec, simulate_arrays

log = logging.getLogger(__name__)

MAX_PATHS = 10 ** 6
MAX_CONDITION = 1e10


def _raw_column(dataset: Dataset, name: str) -> np.ndarray:
    if name in dataset.omics.features:
        return dataset.omics.raw_column(name)
    if dataset.outcome is not None and name == dataset.outcome.features[0]:
        return dataset.outcome.raw[:, 0]
    raise DataError(f"no data column for node {name!r}")


def fit_coefficients(graph: CausalGraph, data: Dataset) -> CausalGraph:
    """Regress every node on its directed parents (raw units, with intercept).

    Returns a new graph whose directed edges carry the fitted coefficient and
    a ``fit`` provenance entry with its standard error. Nodes whose parent
    design has condition number above 1e10 are left unfitted and listed
    under ``notes["fit_failures"]``.
    """
    out = graph.copy()
    failures = []
    n = data.n_samples
    for node in out.nodes:
        parents = out.parents(node)
        if not parents:
            continue
        y = _raw_column(data, node)
        xp = np.column_stack([_raw_column(data, p) for p in parents])
        xc = xp - xp.mean(axis=0)
        sd = np.sqrt((xc ** 2).sum(axis=0) / (n - 1))
        cond = np.inf if np.any(sd == 0) else np.linalg.cond(xc / sd)
        if not np.isfinite(cond) or cond > MAX_CONDITION or n <= len(parents) + 1:
            failures.append({"node": node, "parents": parents, "condition": None if not np.isfinite(cond) else float(cond)})
            for p in parents:
                out.edge(p, node).coefficient = None
            log.warning("coefficients for %s withheld (collinear parents %s)", node, parents)
            continue
        design = np.column_stack([np.ones(n), xp])
        beta, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ beta
        sigma2 = float(resid @ resid) / (n - len(parents) - 1)
        cov = sigma2 * np.linalg.inv(design.T @ design)
        for k, p in enumerate(parents):
            e = out.edge(p, node)
            e.coefficient = float(beta[k + 1])
            e.provenance = [x for x in e.provenance if x.get("kind") != "fit"]
            e.provenance.append({"kind": "fit", "coefficient": float(beta[k + 1]),
                                 "std_error": float(np.sqrt(cov[k + 1, k + 1])), "n": n})
    if failures:
        out.notes["fit_failures"] = failures
    else:
        out.notes.pop("fit_failures", None)
    return out


def std_error(graph: CausalGraph, a: str, b: str) -> float | None:
    e = graph.edge(a, b)
    for p in (e.provenance if e else ()):
        if p.get("kind") == "fit":
            return p["std_error"]
    return None


@dataclass
class EffectEstimate:
    source: str
    target: str
    total: float
    direct: float
    indirect: float
    adjustment_set: list[str]
    paths: list[tuple[list[str], float]] = field(default_factory=list)
    partial: bool = False
    flagged_paths: list[list[str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target, "total": self.total,
                "direct": self.direct, "indirect": self.indirect,
                "adjustment_set": self.adjustment_set,
                "paths": [{"path": p, "product": v} for p, v in self.paths],
                "partial": self.partial, "flagged_paths": self.flagged_paths}


def _check_nodes(graph: CausalGraph, *nodes: str) -> None:
    for n in nodes:
        if n not in graph.nodes:
            raise DataError(f"unknown node {n!r}")


def _simple_paths(adj, source, target, limit, avoid=frozenset()):
    return list(simple_paths(adj, source, target, limit, avoid))


def directed_paths(graph: CausalGraph, source: str, target: str, limit: int = MAX_PATHS,
                   avoid=()) -> list[list[str]]:
    """All directed paths ``source -> ... -> target`` not visiting ``avoid``."""
    _check_nodes(graph, source, target)
    return _simple_paths(graph.successors(), source, target, limit, frozenset(avoid))


def total_effect(graph: CausalGraph, source: str, target: str, max_paths: int = MAX_PATHS) -> EffectEstimate:
    """Path-product decomposition of the effect of ``source`` on ``target``.

    Only directed edges with fitted coefficients carry effect. Paths that
    would need an undirected, conflicted or unfitted edge are listed in
    ``flagged_paths`` and mark the estimate ``partial``.
    """
    _check_nodes(graph, source, target)
    if source == target:
        raise ValueError("source and target must differ")
    usable = {n: [] for n in graph.nodes}
    mixed = {n: [] for n in graph.nodes}
    for e in graph.edges:
        if e.directed:
            mixed[e.a].append(e.b)
            if e.coefficient is not None:
                usable[e.a].append(e.b)
        else:
            mixed[e.a].append(e.b)
            mixed[e.b].append(e.a)
    for v in list(usable.values()) + list(mixed.values()):
        v.sort()

    paths = []
    direct = 0.0
    indirect = 0.0
    for p in _simple_paths(usable, source, target, max_paths):
        prod = 1.0
        for a, b in zip(p[:-1], p[1:]):
            prod *= graph.edge(a, b).coefficient
        paths.append((p, prod))
        if len(p) == 2:
            direct = prod
        else:
            indirect += prod
    usable_set = {tuple(p) for p, _ in paths}
    flagged = [p for p in _simple_paths(mixed, source, target, max_paths) if tuple(p) not in usable_set]
    if flagged:
        log.warning("effect %s -> %s: %d path(s) through non-directed or unfitted edges excluded",
                    source, target, len(flagged))
    return EffectEstimate(source, target, direct + indirect, direct, indirect,
                          graph.parents(source), paths, bool(flagged), flagged)


def total_effect_matrix(graph: CausalGraph) -> tuple[list[str], np.ndarray]:
    """All-pairs total effects ``(I - B)^-1 - I`` over fitted directed edges (row = source)."""
    nodes = list(graph.nodes)
    idx = {n: i for i, n in enumerate(nodes)}
    b = np.zeros((len(nodes), len(nodes)))
    for e in graph.edges:
        if e.directed and e.coefficient is not None:
            b[idx[e.a], idx[e.b]] = e.coefficient
    eye = np.eye(len(nodes))
    return nodes, np.linalg.solve(eye - b, eye) - eye


def interventional_oracle(spec: SemSpec, source: str, delta: float, n_samples: int = 5000,
                          seed: int = 0) -> dict[str, float]:
    """Mean shift of every node under ``do(source += delta)`` on the true SEM.

    Baseline and intervened worlds share all random draws.
    """
    if source not in spec.nodes:
        raise DataError(f"unknown node {source!r}")
    _, base = simulate_arrays(spec, n_samples, seed)
    _, shifted = simulate_arrays(spec, n_samples, seed, intervention=(source, delta))
    return {n: float(np.mean(shifted[n] - base[n])) for n in spec.nodes}


def ancestors(graph: CausalGraph, node: str) -> set[str]:
    pred = graph.predecessors()
    seen, stack = set(), [node]
    while stack:
        for p in pred[stack.pop()]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return seen


def descendants(graph: CausalGraph, node: str, removed: frozenset = frozenset()) -> set[str]:
    succ = graph.successors()
    seen, stack = set(), [node]
    while stack:
        for c in succ[stack.pop()]:
            if c not in seen and c not in removed:
                seen.add(c)
                stack.append(c)
    return seen


def confounders(graph: CausalGraph, source: str, target: str) -> list[str]:
    """Common ancestors of ``source`` and ``target`` with a path to ``target`` avoiding ``source``."""
    _check_nodes(graph, source, target)
    out = []
    for c in sorted(ancestors(graph, source) - {target}):
        if target in descendants(graph, c, removed=frozenset({source})):
            out.append(c)
    return out


def mediators(graph: CausalGraph, source: str, target: str) -> list[str]:
    """Nodes on at least one directed ``source -> ... -> target`` path, endpoints excluded."""
    _check_nodes(graph, source, target)
    return sorted((descendants(graph, source) & ancestors(graph, target)) - {source, target})
