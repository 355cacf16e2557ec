"""Linear-Gaussian SEM simulator with genetic variants as exogenous causes, plus recovery scoring."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, assemble_dataset
from .errors import ConfigError, DataError
from .graph import DIRECTED, CausalGraph, topological_order


@dataclass(frozen=True)
class SemSpec:
    """Ground-truth structural model.

    ``order`` is a topological order of ``nodes``; ``edges`` maps
    ``(parent, child)`` to a path coefficient.
    """

    nodes: tuple[str, ...]
    order: tuple[str, ...]
    edges: Mapping[tuple[str, str], float]
    noise_sd: Mapping[str, float]
    variants: tuple[str, ...]
    maf: Mapping[str, float]
    variant_effects: tuple[tuple[str, str, float], ...] = ()
    pleiotropy_triples: tuple[tuple[str, str, str], ...] = ()
    seed: int = 0
    outcome: str | None = None

    def __post_init__(self):
        if set(self.order) != set(self.nodes) or len(self.order) != len(self.nodes):
            raise ConfigError("order must be a permutation of nodes")
        pos = {n: i for i, n in enumerate(self.order)}
        for (a, b) in self.edges:
            if a not in pos or b not in pos:
                raise ConfigError(f"edge {a}->{b} references an unknown node")
            if pos[a] >= pos[b]:
                raise ConfigError(f"edge {a}->{b} violates the topological order")
        for v, m in self.maf.items():
            if not 0.0 < m <= 0.5:
                raise ConfigError(f"maf of {v} must lie in (0, 0.5]")
        known = set(self.variants)
        for v, node, _ in self.variant_effects:
            if v not in known or node not in pos:
                raise ConfigError(f"variant effect {v}->{node} references unknown ids")
        if self.outcome is not None:
            if self.outcome not in pos:
                raise ConfigError("outcome must be one of the nodes")
            if any(a == self.outcome for a, _ in self.edges):
                raise ConfigError("outcome must not have children")

    @classmethod
    def build(
        cls,
        edges: Mapping[tuple[str, str], float],
        variant_effects: Sequence[tuple[str, str, float]] = (),
        nodes: Sequence[str] | None = None,
        maf: Mapping[str, float] | float = 0.3,
        noise_sd: Mapping[str, float] | float = 1.0,
        outcome: str | None = None,
        seed: int = 0,
    ) -> "SemSpec":
        """Convenience constructor that derives the node set and topological order."""
        node_set = set(nodes or ())
        for a, b in edges:
            node_set.update((a, b))
        for _, n, _ in variant_effects:
            node_set.add(n)
        all_nodes = tuple(sorted(node_set))
        succ = {n: sorted(b for (a, b) in edges if a == n) for n in all_nodes}
        order = tuple(topological_order(succ))
        variants = tuple(sorted({v for v, _, _ in variant_effects}))
        if not isinstance(maf, Mapping):
            maf = {v: float(maf) for v in variants}
        if not isinstance(noise_sd, Mapping):
            noise_sd = {n: float(noise_sd) for n in all_nodes}
        return cls(all_nodes, order, dict(edges), dict(noise_sd), variants, dict(maf),
                   tuple(variant_effects), (), seed, outcome)

    @property
    def omic_nodes(self) -> tuple[str, ...]:
        return tuple(n for n in self.nodes if n != self.outcome)

    def parents(self, node: str) -> list[str]:
        return sorted(a for (a, b) in self.edges if b == node)

    def to_graph(self) -> CausalGraph:
        g = CausalGraph(self.nodes, self.outcome)
        for (a, b), c in sorted(self.edges.items()):
            g.add_edge(a, b, DIRECTED, c)
        return g

    def implied_covariance(self) -> np.ndarray:
        """Covariance of the node values (in ``nodes`` order) implied by the model."""
        idx = {n: i for i, n in enumerate(self.nodes)}
        p = len(self.nodes)
        b = np.zeros((p, p))
        for (a, c), coef in self.edges.items():
            b[idx[c], idx[a]] = coef
        vidx = {v: i for i, v in enumerate(self.variants)}
        gamma = np.zeros((p, len(self.variants)))
        for v, n, beta in self.variant_effects:
            gamma[idx[n], vidx[v]] += beta
        gvar = np.diag([2 * self.maf[v] * (1 - self.maf[v]) for v in self.variants])
        noise = np.diag([self.noise_sd[n] ** 2 for n in self.nodes])
        a_inv = np.linalg.inv(np.eye(p) - b)
        return a_inv @ (gamma @ gvar @ gamma.T + noise) @ a_inv.T

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "order": list(self.order),
            "edges": [{"source": a, "target": b, "coefficient": c} for (a, b), c in sorted(self.edges.items())],
            "noise_sd": dict(sorted(self.noise_sd.items())),
            "variants": list(self.variants),
            "maf": dict(sorted(self.maf.items())),
            "variant_effects": [{"variant": v, "node": n, "beta": b} for v, n, b in self.variant_effects],
            "pleiotropy_triples": [list(t) for t in self.pleiotropy_triples],
            "seed": self.seed,
            "outcome": self.outcome,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "SemSpec":
        try:
            return cls(
                tuple(d["nodes"]), tuple(d["order"]),
                {(e["source"], e["target"]): float(e["coefficient"]) for e in d["edges"]},
                {k: float(v) for k, v in d["noise_sd"].items()},
                tuple(d["variants"]), {k: float(v) for k, v in d["maf"].items()},
                tuple((e["variant"], e["node"], float(e["beta"])) for e in d["variant_effects"]),
                tuple(tuple(t) for t in d.get("pleiotropy_triples", ())),
                int(d.get("seed", 0)), d.get("outcome"),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed SEM document: {exc}") from None

    @classmethod
    def load(cls, path) -> "SemSpec":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise DataError(f"file not found: {path}") from None


def _ids(prefix: str, n: int) -> list[str]:
    width = max(2, len(str(n)))
    return [f"{prefix}{i + 1:0{width}d}" for i in range(n)]


def random_sem(n_nodes: int, expected_degree: float, n_variants: int, ivs_per_node: int,
               seed: int = 0) -> SemSpec:
    """Random DAG with exclusive per-node instruments.

    Each forward pair of a random topological order becomes an edge with
    probability ``expected_degree / (n_nodes - 1)``; coefficients are
    uniform on +-[0.5, 1.5]. Every node receives ``ivs_per_node`` variants of
    its own (beta uniform on [0.3, 0.8]); remaining variants have no effect.
    """
    if min(n_nodes, n_variants, ivs_per_node) < 1 or expected_degree < 0:
        raise ConfigError("counts must be >= 1 and expected_degree >= 0")
    if n_variants < n_nodes * ivs_per_node:
        raise ConfigError(f"need at least {n_nodes * ivs_per_node} variants for "
                          f"{ivs_per_node} exclusive instruments per node")
    prob = expected_degree / (n_nodes - 1) if n_nodes > 1 else 0.0
    if prob > 1.0:
        raise ConfigError("expected_degree must not exceed n_nodes - 1")
    rng = np.random.default_rng(seed)
    nodes = _ids("M", n_nodes)
    order = [nodes[i] for i in rng.permutation(n_nodes)]
    edges = {}
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < prob:
                sign = 1.0 if rng.random() < 0.5 else -1.0
                edges[(order[i], order[j])] = sign * float(rng.uniform(0.5, 1.5))
    variants = _ids("rs", n_variants)
    maf = {v: float(m) for v, m in zip(variants, rng.uniform(0.1, 0.5, n_variants))}
    assigned = [variants[i] for i in rng.permutation(n_variants)[: n_nodes * ivs_per_node]]
    betas = rng.uniform(0.3, 0.8, n_nodes * ivs_per_node)
    effects = tuple((assigned[k * ivs_per_node + m], node, float(betas[k * ivs_per_node + m]))
                    for k, node in enumerate(nodes) for m in range(ivs_per_node))
    return SemSpec(tuple(nodes), tuple(order), edges, {n: 1.0 for n in nodes}, tuple(variants),
                   maf, effects, (), seed, None)


def add_pleiotropy(spec: SemSpec, variant: str, node_a: str, node_b: str,
                   beta_a: float = 0.5, beta_b: float = 0.5, maf: float = 0.3) -> SemSpec:
    """Return a copy of ``spec`` where ``variant`` acts directly on two nodes."""
    variants = spec.variants if variant in spec.variants else spec.variants + (variant,)
    mafs = dict(spec.maf)
    mafs.setdefault(variant, maf)
    effects = spec.variant_effects + ((variant, node_a, beta_a), (variant, node_b, beta_b))
    return replace(spec, variants=variants, maf=mafs, variant_effects=effects,
                   pleiotropy_triples=spec.pleiotropy_triples + ((variant, node_a, node_b),))


def simulate_arrays(spec: SemSpec, n_samples: int, seed: int,
                    intervention: tuple[str, float] | None = None) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Draw genotypes and node values. ``intervention=(node, delta)`` shifts ``node`` by ``delta``.

    The random stream does not depend on the intervention, so paired calls
    share every noise draw.
    """
    rng = np.random.default_rng(seed)
    maf = np.array([spec.maf[v] for v in spec.variants])
    geno = rng.binomial(2, maf, size=(n_samples, len(spec.variants))).astype(float)
    vidx = {v: i for i, v in enumerate(spec.variants)}
    noise = {n: rng.normal(0.0, spec.noise_sd[n], n_samples) for n in spec.order}
    values: dict[str, np.ndarray] = {}
    for node in spec.order:
        x = noise[node].copy()
        for p in spec.parents(node):
            x += spec.edges[(p, node)] * values[p]
        for v, n, beta in spec.variant_effects:
            if n == node:
                x += beta * geno[:, vidx[v]]
        if intervention is not None and intervention[0] == node:
            x += intervention[1]
        values[node] = x
    return geno, values


def simulate(spec: SemSpec, n_samples: int, seed: int = 0) -> Dataset:
    """Sample a dataset from ``spec``; deterministic in ``(spec, n_samples, seed)``."""
    if n_samples < 10:
        raise ConfigError("n_samples must be at least 10")
    geno, values = simulate_arrays(spec, n_samples, seed)
    samples = _ids("s", n_samples)
    columns = list(spec.omic_nodes) + ([spec.outcome] if spec.outcome else [])
    omics = np.column_stack([values[n] for n in columns])
    return assemble_dataset(samples, spec.variants, geno, columns, omics, spec.outcome)


@dataclass(frozen=True)
class RecoveryScore:
    skeleton_precision: float
    skeleton_recall: float
    skeleton_f1: float
    orientation_accuracy: float  # NaN when no scorable directed edge was emitted
    shd: int
    n_directed_scored: int = 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if math.isnan(d["orientation_accuracy"]):
            d["orientation_accuracy"] = None
        return d


def score_recovery(truth: SemSpec, learned: CausalGraph) -> RecoveryScore:
    """Skeleton precision/recall/F1, orientation accuracy and SHD against the truth.

    SHD counts one operation per unordered pair that differs: a missing or
    extra adjacency, a reversed arrow, or an arrow left undirected/conflicted.
    """
    if set(truth.nodes) != set(learned.nodes):
        raise DataError("truth and learned graph have different node sets")
    true_dir = set(truth.edges)
    true_pairs = {frozenset(e) for e in true_dir}
    learned_pairs = {frozenset((e.a, e.b)) for e in learned.edges}
    tp = len(true_pairs & learned_pairs)
    precision = tp / len(learned_pairs) if learned_pairs else 0.0
    recall = tp / len(true_pairs) if true_pairs else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    if not true_pairs and not learned_pairs:
        precision = recall = f1 = 1.0

    correct = scored = 0
    for a, b in learned.directed_edges():
        if frozenset((a, b)) in true_pairs:
            scored += 1
            correct += (a, b) in true_dir
    accuracy = correct / scored if scored else float("nan")

    shd = 0
    for pair in true_pairs | learned_pairs:
        a, b = sorted(pair)
        t = (a, b) if (a, b) in true_dir else (b, a) if (b, a) in true_dir else None
        e = learned.edge(a, b)
        if t is None or e is None:
            shd += 1
        elif not e.directed or (e.a, e.b) != t:
            shd += 1
    return RecoveryScore(precision, recall, f1, accuracy, shd, scored)
