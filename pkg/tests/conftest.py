import itertools

import numpy as np
import pytest

from mrnet.graph import CausalGraph


def random_dag(rng, n, p=0.3, prefix="N"):
    """Random DAG on ``n`` nodes; returns (graph, set of (a, b) edges)."""
    nodes = [f"{prefix}{i:02d}" for i in range(n)]
    order = list(rng.permutation(nodes))
    edges = set()
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < p:
            edges.add((order[i], order[j]))
    g = CausalGraph(nodes)
    for a, b in sorted(edges):
        g.add_edge(a, b, coefficient=float(rng.uniform(0.5, 1.5)))
    return g, edges


def brute_paths(edges, source, target, avoid=()):
    """Every simple directed path by recursive extension over the edge set."""
    out = []

    def extend(path):
        last = path[-1]
        if last == target:
            out.append(list(path))
            return
        for a, b in edges:
            if a == last and b not in path and b not in avoid:
                extend(path + [b])

    if source not in avoid:
        extend([source])
    return sorted(out)


def closure(nodes, edges):
    """Boolean transitive closure (Warshall)."""
    idx = {n: i for i, n in enumerate(nodes)}
    r = np.zeros((len(nodes), len(nodes)), dtype=bool)
    for a, b in edges:
        r[idx[a], idx[b]] = True
    for k in range(len(nodes)):
        r |= r[:, [k]] & r[[k], :]
    return idx, r


def whiten(z):
    """Rescale columns so the sample covariance (n-1) is exactly the identity."""
    z = z - z.mean(axis=0)
    cov = z.T @ z / (len(z) - 1)
    return z @ np.linalg.inv(np.linalg.cholesky(cov)).T


def pytest_configure(config):
    config._acceptance = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record one ``PASS``/``FAIL`` line per criterion for the terminal summary."""

    def record(label, ok, detail=""):
        request.config._acceptance.append(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
        return ok

    return record


def sem_with_ivs(edges, nodes, ivs_per_node=3, beta=0.5, with_ivs=None):
    """SemSpec with ``ivs_per_node`` exclusive variants on each node in ``with_ivs`` (default all)."""
    from mrnet.synth import SemSpec
    effects = []
    for node in (nodes if with_ivs is None else with_ivs):
        for k in range(ivs_per_node):
            effects.append((f"rs_{node}_{k}", node, beta))
    return SemSpec.build(edges, effects, nodes=nodes)


def run_pipeline(spec, n=5000, seed=0, config=None):
    """simulate -> instruments -> allocation -> learn; returns (dataset, instruments, allocation, result)."""
    from mrnet.config import RunConfig
    from mrnet.instruments import allocate, generate_ivs
    from mrnet.learn import learn_network
    from mrnet.synth import simulate
    config = config or RunConfig()
    ds = simulate(spec, n, seed)
    ivs = generate_ivs(ds.genotype, config.max_ivs or None, config.min_explained_variance,
                       config.iv_rotation)
    alloc = allocate(ivs, ds.omics, config.f_threshold, config.max_per_component, config.exclusive_ivs)
    return ds, ivs, alloc, learn_network(ds, ivs, alloc, config)
