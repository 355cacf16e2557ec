import hashlib
import json

import pytest

from mrnet.cli import MANIFEST, main
from mrnet.graph import CausalGraph
from mrnet.synth import SemSpec, simulate
from mrnet.data import genotype_csv, omics_csv


def _digests(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


def _simulate(out, *extra):
    assert main(["simulate", "--nodes", "6", "--samples", "2000", "--seed", "7", "--out", str(out), *extra]) == 0


def test_simulate_twice_identical(tmp_path):
    _simulate(tmp_path / "a")
    _simulate(tmp_path / "b")
    a, b = _digests(tmp_path / "a"), _digests(tmp_path / "b")
    a.pop(MANIFEST), b.pop(MANIFEST)  # manifests differ only in the recorded --out
    assert a == b
    man = json.loads((tmp_path / "a" / MANIFEST).read_text())
    other = json.loads((tmp_path / "b" / MANIFEST).read_text())
    assert man["outputs"] == other["outputs"] and man["config"] == other["config"]
    assert man["seed"] == 7 and man["command"] == "simulate"
    assert set(man["outputs"]) == {"genotype.csv", "omics.csv", "truth.json", "dataset.json"}
    assert man["outputs"]["omics.csv"] == _digests(tmp_path / "a")["omics.csv"]
    assert {"mrnet", "numpy", "python"} <= set(man["versions"])


def test_learn_missing_genotype_file(tmp_path, capsys):
    _simulate(tmp_path / "d")
    (tmp_path / "d" / "genotype.csv").unlink()
    assert main(["ivgen", "--genotype", str(tmp_path / "d" / "genotype.csv"), "--omics",
                 str(tmp_path / "d" / "omics.csv"), "--out", str(tmp_path / "iv")]) == 1
    assert "genotype.csv" in capsys.readouterr().err
    (tmp_path / "ivs").mkdir()
    assert main(["learn", "--dataset", str(tmp_path / "d"), "--ivs", str(tmp_path / "ivs"),
                 "--out", str(tmp_path / "net")]) == 1
    err = capsys.readouterr().err
    assert str(tmp_path / "d" / "genotype.csv") in err
    assert not (tmp_path / "net").exists()


def test_usage_errors_exit_one(capsys):
    assert main(["learn"]) == 1
    assert main(["nonsense"]) == 1
    assert "error" in capsys.readouterr().err


def _chain_dataset(folder, n_nodes=10, n=5000):
    nodes = [f"M{i:02d}" for i in range(n_nodes)]
    spec = SemSpec.build({(a, b): 0.8 for a, b in zip(nodes, nodes[1:])},
                         [(f"rs{m}_{k}", m, 0.5) for m in nodes for k in range(3)])
    ds = simulate(spec, n, 11)
    folder.mkdir()
    (folder / "genotype.csv").write_text(genotype_csv(ds.genotype))
    (folder / "omics.csv").write_text(omics_csv(ds))
    (folder / "truth.json").write_text(spec.to_json())
    return spec


def _pipeline(tmp_path):
    d = tmp_path / "data"
    _chain_dataset(d)
    assert main(["ivgen", "--genotype", str(d / "genotype.csv"), "--omics", str(d / "omics.csv"),
                 "--out", str(tmp_path / "iv")]) == 0
    assert main(["learn", "--dataset", str(d), "--ivs", str(tmp_path / "iv"), "--out", str(tmp_path / "net")]) == 0
    return d


def test_full_pipeline_on_chain(tmp_path):
    d = _pipeline(tmp_path)
    graph = tmp_path / "net" / "graph.json"
    assert main(["score", "--truth", str(d / "truth.json"), "--graph", str(graph),
                 "--out", str(tmp_path / "score")]) == 0
    score = json.loads((tmp_path / "score" / "score.json").read_text())
    assert score["skeleton_f1"] >= 0.9

    assert main(["analyze", "--graph", str(graph), "--propagate", "M00", "--modules"]) == 0
    out = tmp_path / "net" / "analysis"
    assert {"profiles.csv", "propagation.json", "modules.json", "graph.dot", "graph.graphml", MANIFEST} \
        <= set(_digests(out))

    assert main(["effects", "--graph", str(graph), "--dataset", str(d), "--all-pairs",
                 "--out", str(tmp_path / "eff")]) == 0
    header = (tmp_path / "eff" / "total_effects.csv").read_text().splitlines()[0]
    assert header.startswith("source,M00")

    assert main(["export", "--graph", str(graph), "--format", "dot", "--out", str(tmp_path / "g.dot")]) == 0
    assert (tmp_path / "g.dot").read_text().startswith("digraph")


def test_effects_pair_prints_json(tmp_path, capsys):
    d = _pipeline(tmp_path)
    capsys.readouterr()
    assert main(["effects", "--graph", str(tmp_path / "net" / "graph.json"), "--dataset", str(d),
                 "--source", "M00", "--target", "M02"]) == 0
    est = json.loads(capsys.readouterr().out)
    assert est["total"] == pytest.approx(est["direct"] + est["indirect"], abs=1e-12)
    assert main(["effects", "--graph", str(tmp_path / "net" / "graph.json"), "--dataset", str(d)]) == 1


def test_analyze_unknown_node_leaves_no_output(tmp_path):
    g = CausalGraph(["a", "b"])
    g.add_edge("a", "b")
    (tmp_path / "g.json").write_text(g.to_json())
    assert main(["analyze", "--graph", str(tmp_path / "g.json"), "--propagate", "zz",
                 "--out", str(tmp_path / "an")]) == 1
    assert not (tmp_path / "an").exists()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# test config\nalpha = 0.05\nseed = 3\n")
    _simulate(tmp_path / "a", "--config", str(cfg))
    man = json.loads((tmp_path / "a" / MANIFEST).read_text())
    assert man["config"]["alpha"] == 0.05 and man["seed"] == 7  # flag beats file


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("alpah = 0.05\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
    assert "alpah" in capsys.readouterr().err


def test_invalid_config_value_exit_one(tmp_path):
    assert main(["simulate", "--nodes", "4", "--seed", "-1", "--out", str(tmp_path / "x")]) == 1


def _argv_from_manifest(man, out):
    argv = [man["command"]]
    for key, value in man["args"].items():
        if key in ("command", "out", "config") or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        argv += [flag] if value is True else [flag, str(value)]
    cfg = out.parent / f"{out.name}.cfg"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in man["config"].items()))
    return argv + ["--config", str(cfg), "--out", str(out)]


def test_outputs_reproducible_from_manifest(tmp_path):
    _pipeline(tmp_path)
    for stage in ("iv", "net"):
        man = json.loads((tmp_path / stage / MANIFEST).read_text())
        replay = tmp_path / f"{stage}_replay"
        assert main(_argv_from_manifest(man, replay)) == 0
        again = json.loads((replay / MANIFEST).read_text())
        assert again["outputs"] == man["outputs"]
        assert list(again["inputs"].values()) == list(man["inputs"].values())
