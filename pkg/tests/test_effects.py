import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_paths, random_dag
from mrnet.data import assemble_dataset
from mrnet.effects import (confounders, fit_coefficients, interventional_oracle, mediators,
                           std_error, total_effect, total_effect_matrix)
from mrnet.errors import DataError, PathOverflowError
from mrnet.graph import CONFLICTED, UNDIRECTED, CausalGraph
from mrnet.synth import SemSpec, simulate


def _dataset(columns: dict):
    n = len(next(iter(columns.values())))
    geno = np.random.default_rng(0).integers(0, 3, (n, 1))
    geno[0], geno[1] = 0, 2
    return assemble_dataset([f"s{i}" for i in range(n)], ["v"], geno, list(columns),
                            np.column_stack(list(columns.values())))


def _graph(edges, nodes=None, coefs=None):
    nodes = nodes or sorted({x for e in edges for x in e})
    g = CausalGraph(nodes)
    for e in edges:
        g.add_edge(*e, coefficient=None if coefs is None else coefs[e])
    return g


def test_fit_single_parent():
    rng = np.random.default_rng(1)
    a = rng.normal(size=5000)
    b = 2 * a + rng.normal(size=5000)
    g = fit_coefficients(_graph([("A", "B")]), _dataset({"A": a, "B": b}))
    assert g.edge("A", "B").coefficient == pytest.approx(2, abs=0.1)
    assert std_error(g, "A", "B") == pytest.approx(1 / np.sqrt(5000), rel=0.1)


def test_fit_two_parents_jointly():
    rng = np.random.default_rng(2)
    a, c = rng.normal(size=5000), rng.normal(size=5000)
    c = c + 0.5 * a  # correlated parents: marginal slopes would be biased
    b = 2 * a + 3 * c + rng.normal(size=5000)
    g = fit_coefficients(_graph([("A", "B"), ("C", "B")]), _dataset({"A": a, "B": b, "C": c}))
    assert g.edge("A", "B").coefficient == pytest.approx(2, abs=0.1)
    assert g.edge("C", "B").coefficient == pytest.approx(3, abs=0.1)


def test_fit_source_node_and_nondirected_edges_untouched():
    rng = np.random.default_rng(3)
    cols = {k: rng.normal(size=200) for k in "ABC"}
    g = _graph([("A", "B")], nodes=["A", "B", "C"])
    g.add_edge("B", "C", UNDIRECTED)
    out = fit_coefficients(g, _dataset(cols))
    assert out.edge("B", "C").coefficient is None
    assert "fit_failures" not in out.notes
    assert out.parents("A") == []


def test_fit_collinear_parents_withheld_and_reported():
    rng = np.random.default_rng(4)
    a = rng.normal(size=300)
    cols = {"A": a, "A2": 2 * a, "B": a + rng.normal(size=300)}
    out = fit_coefficients(_graph([("A", "B"), ("A2", "B")]), _dataset(cols))
    assert out.edge("A", "B").coefficient is None and out.edge("A2", "B").coefficient is None
    assert out.notes["fit_failures"][0]["node"] == "B"


@pytest.mark.slow
def test_fitted_coefficients_cover_truth_within_three_se():
    spec = SemSpec.build({("A", "B"): 0.7, ("B", "C"): -0.9, ("A", "C"): 0.5})
    hits = total = 0
    for seed in range(100):
        ds = simulate(spec, 1000, seed)
        g = fit_coefficients(spec.to_graph(), ds)
        for (a, b), c in spec.edges.items():
            total += 1
            hits += abs(g.edge(a, b).coefficient - c) <= 3 * std_error(g, a, b)
    assert hits / total >= 0.95


def test_chain_total_effect():
    g = _graph([("A", "B"), ("B", "C")], coefs={("A", "B"): 2.0, ("B", "C"): 3.0})
    est = total_effect(g, "A", "C")
    assert (est.total, est.direct, est.indirect) == (6.0, 0.0, 6.0)
    assert est.paths == [(["A", "B", "C"], 6.0)]


def test_diamond_total_effect():
    coefs = {("A", "C"): 1.5, ("A", "B"): 2.0, ("B", "C"): 3.0}
    est = total_effect(_graph(list(coefs), coefs=coefs), "A", "C")
    assert est.total == pytest.approx(7.5, abs=1e-12)
    assert est.direct == 1.5 and est.indirect == pytest.approx(6.0, abs=1e-12)
    assert est.total == est.direct + est.indirect


def test_no_path_gives_zero():
    g = _graph([("A", "B")], nodes=["A", "B", "C"], coefs={("A", "B"): 1.0})
    est = total_effect(g, "A", "C")
    assert (est.total, est.direct, est.indirect) == (0.0, 0.0, 0.0)


def test_adjustment_set_is_source_parents():
    coefs = {("D", "A"): 1.0, ("D", "B"): 1.0, ("A", "B"): 1.0}
    assert total_effect(_graph(list(coefs), coefs=coefs), "A", "B").adjustment_set == ["D"]


def test_conflicted_edge_marks_estimate_partial():
    g = _graph([("A", "B")], nodes=["A", "B", "C"], coefs={("A", "B"): 1.0})
    g.add_edge("B", "C", CONFLICTED)
    est = total_effect(g, "A", "C")
    assert est.partial and est.flagged_paths == [["A", "B", "C"]]
    assert est.total == 0.0


def test_effect_errors():
    g = _graph([("A", "B")], coefs={("A", "B"): 1.0})
    with pytest.raises(ValueError):
        total_effect(g, "A", "A")
    with pytest.raises(DataError):
        total_effect(g, "A", "Z")


def test_path_overflow_is_loud():
    # layered graph: 2^6 = 64 source->sink paths
    g = CausalGraph(["s"] + [f"{l}{k}" for l in "abcdef" for k in "01"] + ["t"])
    prev = ["s"]
    for layer in "abcdef":
        cur = [f"{layer}0", f"{layer}1"]
        for p in prev:
            for c in cur:
                g.add_edge(p, c, coefficient=0.5)
        prev = cur
    for p in prev:
        g.add_edge(p, "t", coefficient=0.5)
    assert len(total_effect(g, "s", "t").paths) == 64
    with pytest.raises(PathOverflowError):
        total_effect(g, "s", "t", max_paths=10)


def test_total_effect_matrix_matches_path_sums():
    rng = np.random.default_rng(5)
    g, _ = random_dag(rng, 7, 0.4)
    nodes, mat = total_effect_matrix(g)
    for i, s in enumerate(nodes):
        for j, t in enumerate(nodes):
            if s != t:
                assert mat[i, j] == pytest.approx(total_effect(g, s, t).total, abs=1e-9)


def test_oracle_chain_shift():
    spec = SemSpec.build({("A", "B"): 2.0, ("B", "C"): 3.0})
    shift = interventional_oracle(spec, "A", 1.0)
    # shared noise draws make the shift exact up to rounding
    assert shift["C"] == pytest.approx(6.0, abs=1e-9)
    assert shift["B"] == pytest.approx(2.0, abs=1e-9)


def test_oracle_sink_and_null_intervention():
    spec = SemSpec.build({("A", "B"): 2.0, ("B", "C"): 3.0})
    sink = interventional_oracle(spec, "C", 1.0)
    assert sink["A"] == 0.0 and sink["B"] == 0.0
    assert all(v == 0.0 for v in interventional_oracle(spec, "A", 0.0).values())


def test_confounder_cases():
    assert confounders(_graph([("C", "A"), ("C", "B")]), "A", "B") == ["C"]
    assert confounders(_graph([("A", "B"), ("B", "C")]), "A", "C") == []
    assert confounders(_graph([("D", "A"), ("D", "B"), ("A", "B")]), "A", "B") == ["D"]


def test_confounder_only_through_source_is_not_one():
    # D reaches B only via A
    assert confounders(_graph([("D", "A"), ("A", "B")]), "A", "B") == []


def test_mediator_cases():
    assert mediators(_graph([("A", "B"), ("B", "C")]), "A", "C") == ["B"]
    assert mediators(_graph([("A", "C")]), "A", "C") == []
    assert mediators(_graph([("A", "B"), ("B", "D"), ("A", "C"), ("C", "D")]), "A", "D") == ["B", "C"]


def _brute_confounders(nodes, edges, s, t):
    return sorted(c for c in nodes if c not in (s, t)
                  and brute_paths(edges, c, s) and brute_paths(edges, c, t, avoid=(s,)))


def _brute_mediators(edges, s, t):
    return sorted({x for p in brute_paths(edges, s, t) for x in p[1:-1]})


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.floats(0.1, 0.9))
def test_confounders_and_mediators_match_brute_force(seed, n, p):
    rng = np.random.default_rng(seed)
    g, edges = random_dag(rng, n, p)
    for s in g.nodes:
        for t in g.nodes:
            if s == t:
                continue
            assert confounders(g, s, t) == _brute_confounders(g.nodes, edges, s, t)
            assert mediators(g, s, t) == _brute_mediators(edges, s, t)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 8))
def test_total_is_direct_plus_indirect(seed, n):
    rng = np.random.default_rng(seed)
    g, edges = random_dag(rng, n, 0.5)
    for s in g.nodes:
        for t in g.nodes:
            if s == t:
                continue
            est = total_effect(g, s, t)
            assert abs(est.total - (est.direct + est.indirect)) <= 1e-6
            expected = sum(np.prod([g.edge(a, b).coefficient for a, b in zip(p, p[1:])])
                           for p in brute_paths(edges, s, t) if len(p) > 2)
            assert est.indirect == pytest.approx(expected, abs=1e-6)
