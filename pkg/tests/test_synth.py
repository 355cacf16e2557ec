import math

import numpy as np
import pytest

from conftest import run_pipeline
from mrnet.ci import CITester, DataColumns
from mrnet.errors import ConfigError, DataError
from mrnet.graph import CausalGraph
from mrnet.instruments import validity_check
from mrnet.learn import learn_skeleton
from mrnet.synth import SemSpec, add_pleiotropy, random_sem, score_recovery, simulate


def test_single_node_has_no_edges():
    spec = random_sem(1, 2, 3, 3, seed=0)
    assert spec.edges == {} and len(spec.variant_effects) == 3


def test_random_sem_deterministic():
    assert random_sem(12, 2, 40, 3, seed=5).to_json() == random_sem(12, 2, 40, 3, seed=5).to_json()
    assert random_sem(12, 2, 40, 3, seed=5).to_json() != random_sem(12, 2, 40, 3, seed=6).to_json()


def test_random_sem_mean_edge_count():
    # E[edges] = C(20, 2) * 2 / 19 = 20
    mean = np.mean([len(random_sem(20, 2, 60, 3, seed=s).edges) for s in range(500)])
    assert abs(mean - 20) <= 2.0


def test_random_sem_ranges():
    spec = random_sem(15, 3, 50, 2, seed=1)
    coefs = np.abs(list(spec.edges.values()))
    assert np.all((coefs >= 0.5) & (coefs <= 1.5))
    betas = [b for _, _, b in spec.variant_effects]
    assert min(betas) >= 0.3 and max(betas) <= 0.8
    assert all(0.1 <= m <= 0.5 for m in spec.maf.values())
    owners = [v for v, _, _ in spec.variant_effects]
    assert len(owners) == len(set(owners)) == 30


def test_random_sem_rejects_bad_counts():
    with pytest.raises(ConfigError):
        random_sem(0, 2, 3, 1)
    with pytest.raises(ConfigError):
        random_sem(5, 2, 4, 1)


def test_spec_rejects_order_violation():
    spec = SemSpec.build({("A", "B"): 1.0})
    with pytest.raises(ConfigError):
        SemSpec(spec.nodes, ("B", "A"), spec.edges, spec.noise_sd, (), {})


def test_spec_round_trips_through_json():
    spec = add_pleiotropy(random_sem(6, 2, 18, 3, seed=2), "rsX", "M01", "M02")
    back = SemSpec.from_dict(spec.to_dict())
    assert back == spec


def test_chain_moment():
    spec = SemSpec.build({("A", "B"): 2.0})
    ds = simulate(spec, 50_000, 3)
    a, b = ds.omics.raw_column("A"), ds.omics.raw_column("B")
    assert np.cov(a, b)[0, 1] / np.var(a, ddof=1) == pytest.approx(2.0, abs=0.05)


def test_simulate_deterministic_and_min_samples():
    spec = random_sem(5, 2, 15, 3, seed=1)
    a, b = simulate(spec, 100, 9), simulate(spec, 100, 9)
    assert np.array_equal(a.omics.raw, b.omics.raw) and np.array_equal(a.genotype.values, b.genotype.values)
    with pytest.raises(ConfigError):
        simulate(spec, 9)


def test_implied_covariance_within_sampling_tolerance():
    spec = random_sem(6, 2, 18, 3, seed=4)
    n = 20_000
    ds = simulate(spec, n, 4)
    raw = np.column_stack([ds.omics.raw_column(x) for x in spec.nodes])
    emp = np.cov(raw, rowvar=False)
    sigma = spec.implied_covariance()
    sd = np.sqrt(np.diag(sigma))
    # compare on the correlation scale, where 3/sqrt(n) bounds sampling error
    assert np.max(np.abs(emp / np.outer(sd, sd) - sigma / np.outer(sd, sd))) <= 3 / math.sqrt(n)


def test_null_model_learns_no_edges():
    nodes = [f"M{i}" for i in range(6)]
    spec = SemSpec.build({}, [(f"rs{i}", n, 0.5) for i, n in enumerate(nodes)], nodes=nodes)
    ds = simulate(spec, 3000, 0)
    sk = learn_skeleton(CITester(DataColumns.from_dataset(ds), 0.01), ds.omics.features)
    assert len(sk.edges()) <= 1


def test_score_identity():
    spec = random_sem(8, 2, 24, 3, seed=3)
    s = score_recovery(spec, spec.to_graph())
    assert (s.skeleton_precision, s.skeleton_recall, s.skeleton_f1, s.shd) == (1.0, 1.0, 1.0, 0)
    assert s.orientation_accuracy == 1.0


def test_score_empty_learned():
    spec = SemSpec.build({("A", "B"): 1, ("B", "C"): 1, ("C", "D"): 1, ("D", "E"): 1, ("A", "E"): 1})
    s = score_recovery(spec, CausalGraph(spec.nodes))
    assert s.skeleton_recall == 0 and s.shd == 5 and s.skeleton_f1 == 0
    assert math.isnan(s.orientation_accuracy) and s.to_dict()["orientation_accuracy"] is None


def test_score_reversal():
    spec = SemSpec.build({("A", "B"): 1.0})
    g = CausalGraph(["A", "B"])
    g.add_edge("B", "A")
    s = score_recovery(spec, g)
    assert (s.skeleton_f1, s.orientation_accuracy, s.shd) == (1.0, 0.0, 1)


def test_score_f1_is_harmonic_mean():
    spec = SemSpec.build({("A", "B"): 1.0, ("B", "C"): 1.0})
    g = CausalGraph(spec.nodes)
    g.add_edge("A", "B")
    g.add_edge("A", "C")
    s = score_recovery(spec, g)
    assert s.skeleton_precision == 0.5 and s.skeleton_recall == 0.5 and s.skeleton_f1 == 0.5
    assert s.shd == 2


def test_score_node_mismatch():
    with pytest.raises(DataError):
        score_recovery(SemSpec.build({("A", "B"): 1.0}), CausalGraph(["A", "C"]))


def test_pleiotropic_variant_fails_validity():
    base = SemSpec.build({("Mi", "Mj"): 0.7}, [("rsc", "Mi", 0.5)])
    spec = add_pleiotropy(base, "rsp", "Mi", "Mj")
    ds = simulate(spec, 5000, 0)
    cols = DataColumns.from_dict({"g": ds.genotype.values[:, ds.genotype.variants.index("rsp")].astype(float),
                                  "c": ds.genotype.values[:, ds.genotype.variants.index("rsc")].astype(float),
                                  "Mi": ds.omics.column("Mi"), "Mj": ds.omics.column("Mj")})
    tester = CITester(cols, 0.01)
    assert not validity_check(tester, "g", "Mi", "Mj").passed
    assert validity_check(tester, "c", "Mi", "Mj").passed


def test_pipeline_recovers_small_random_dag():
    spec = random_sem(6, 1.5, 18, 3, seed=21)
    _, _, _, res = run_pipeline(spec, n=5000, seed=21)
    s = score_recovery(spec, res.graph)
    assert s.skeleton_f1 >= 0.8
