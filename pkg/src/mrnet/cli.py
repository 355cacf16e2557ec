"""Command-line pipeline: ``mrnet <subcommand> [flags]``.

Exit codes: 0 success, 1 data/config error, 2 internal invariant violation.
Every file-producing subcommand stages its outputs in memory and commits
them with temp-file-plus-rename, alongside a ``run_manifest.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import attach_outcome, detect_modules, node_profiles, propagate
from .config import RunConfig
from .data import Dataset, load_dataset, genotype_csv, matrix_csv, omics_csv
from .effects import fit_coefficients, total_effect, total_effect_matrix
from .errors import DataError, InvariantError, MRNetError
from .export import FORMATS, render, to_dot, to_graphml
from .graph import CausalGraph
from .instruments import (Allocation, allocate, generate_ivs, instruments_csv,
                          instruments_meta, read_instruments)
from .learn import learn_network
from .synth import SemSpec, random_sem, score_recovery, simulate

log = logging.getLogger("mrnet")

MANIFEST = "run_manifest.json"


class UsageError(MRNetError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Run:
    """Collects inputs read and outputs produced by one subcommand."""

    def __init__(self, command: str, args: argparse.Namespace, config: RunConfig):
        self.command = command
        self.args = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
        self.config = config
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, bytes] = {}

    def read(self, path) -> Path:
        path = Path(path)
        try:
            self.inputs[str(path)] = _sha256(path.read_bytes())
        except FileNotFoundError:
            raise DataError(f"file not found: {path}") from None
        except IsADirectoryError:
            raise DataError(f"expected a file, got a directory: {path}") from None
        return path

    def stage(self, name: str, text: str) -> None:
        self.outputs[name] = text.encode()

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "args": self.args,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {k: _sha256(v) for k, v in sorted(self.outputs.items())},
            "versions": {"mrnet": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
        }

    def commit(self, out_dir) -> None:
        """Write all staged files atomically; on failure nothing new is left behind."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = dict(self.outputs)
        files[MANIFEST] = _json(self.manifest()).encode()
        temps = []
        try:
            for name, data in files.items():
                fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
                temps.append((tmp, out / name))
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
            for tmp, final in temps:
                os.replace(tmp, final)
        except BaseException:
            for tmp, _ in temps:
                if os.path.exists(tmp):
                    os.unlink(tmp)
            raise


def _config(args) -> RunConfig:
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k, None) for k in
                 ("alpha", "f_threshold", "max_ivs", "max_cond_size", "seed", "threads")}
    return base.replace(**overrides)


def _dataset_files(path, run: Run) -> tuple[Path, Path, str | None]:
    p = Path(path)
    if p.is_file() and p.suffix == ".json":
        p, meta = p.parent, p
    elif p.is_dir():
        meta = p / "dataset.json"
    else:
        raise DataError(f"dataset not found: {path}")
    info = json.loads(run.read(meta).read_text()) if meta.exists() else {}
    return p / info.get("genotype", "genotype.csv"), p / info.get("omics", "omics.csv"), info.get("outcome")


def _load_dataset(path, run: Run, outcome: str | None = None) -> Dataset:
    g, o, default_outcome = _dataset_files(path, run)
    run.read(g)
    run.read(o)
    return load_dataset(g, o, outcome or default_outcome)


def _load_graph(path, run: Run) -> CausalGraph:
    return CausalGraph.load(run.read(path))


def _emit(run: Run, args, name: str, text: str) -> None:
    """Write to ``--out`` (with manifest) when given, else print."""
    if getattr(args, "out", None):
        run.stage(name, text)
        run.commit(args.out)
    else:
        sys.stdout.write(text)


# subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args)
    run = Run("simulate", args, cfg)
    variants = args.variants if args.variants is not None else args.nodes * args.ivs_per_node
    spec_seed, data_seed = (int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(2))
    spec = random_sem(args.nodes, args.degree, variants, args.ivs_per_node, spec_seed)
    data = simulate(spec, args.samples, data_seed)
    run.stage("genotype.csv", genotype_csv(data.genotype))
    run.stage("omics.csv", omics_csv(data))
    run.stage("truth.json", spec.to_json())
    run.stage("dataset.json", _json({"genotype": "genotype.csv", "omics": "omics.csv",
                                     "outcome": data.outcome_name,
                                     "drop_report": data.drop_report.to_dict()}))
    run.commit(args.out)
    return 0


def cmd_ivgen(args) -> int:
    cfg = _config(args)
    if args.rotation:
        cfg = cfg.replace(iv_rotation=args.rotation)
    run = Run("ivgen", args, cfg)
    g, o = run.read(args.genotype), run.read(args.omics)
    data = load_dataset(g, o, args.outcome)
    ivs = generate_ivs(data.genotype, cfg.max_ivs or None, cfg.min_explained_variance, cfg.iv_rotation)
    alloc = allocate(ivs, data.omics, cfg.f_threshold, cfg.max_per_component, cfg.exclusive_ivs)
    if alloc.uncovered:
        log.warning("components without an instrument at F >= %g: %s", cfg.f_threshold,
                    ", ".join(alloc.uncovered))
    run.stage("ivs.csv", instruments_csv(ivs))
    run.stage("ivs_meta.json", _json(instruments_meta(ivs)))
    run.stage("allocation.json", _json(alloc.to_dict()))
    run.stage("coverage.json", _json(alloc.coverage_dict()))
    run.stage("drop_report.json", data.drop_report.to_json() + "\n")
    run.commit(args.out)
    return 0


def _load_ivs(path, run: Run, cfg: RunConfig):
    p = Path(path)
    if p.is_dir():
        csv_path, alloc_path = p / "ivs.csv", p / "allocation.json"
    else:
        csv_path, alloc_path = p, p.parent / "allocation.json"
    run.read(csv_path)
    ivs = read_instruments(csv_path)
    try:
        raw = json.loads(run.read(alloc_path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid allocation JSON {alloc_path}: {exc}") from None
    return ivs, Allocation.from_dict(raw, cfg.f_threshold, cfg.max_per_component)


def cmd_learn(args) -> int:
    cfg = _config(args)
    run = Run("learn", args, cfg)
    data = _load_dataset(args.dataset, run)
    ivs, alloc = _load_ivs(args.ivs, run, cfg)
    result = learn_network(data, ivs, alloc, cfg)
    graph = fit_coefficients(result.graph, data)
    run.stage("graph.json", graph.to_json())
    run.stage("audit.jsonl", result.audit_jsonl())
    run.commit(args.out)
    return 0


def cmd_effects(args) -> int:
    cfg = _config(args)
    run = Run("effects", args, cfg)
    graph = _load_graph(args.graph, run)
    data = _load_dataset(args.dataset, run)
    graph = fit_coefficients(graph, data)
    if args.all_pairs:
        nodes, mat = total_effect_matrix(graph)
        _emit(run, args, "total_effects.csv", matrix_csv(nodes, nodes, mat + 0.0, "source"))
        return 0
    if not (args.source and args.target):
        raise UsageError("effects needs --source and --target, or --all-pairs")
    if args.source == args.target:
        raise UsageError("--source and --target must differ")
    est = total_effect(graph, args.source, args.target)
    _emit(run, args, "effect.json", _json(est.to_dict()))
    return 0


def _profiles_csv(profiles) -> str:
    lines = ["node,out_degree,in_degree,max_blocking_step,role"]
    lines += [f"{p.node},{p.out_degree},{p.in_degree},{p.max_blocking_step},{p.role}" for p in profiles]
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    cfg = _config(args)
    run = Run("analyze", args, cfg)
    graph = _load_graph(args.graph, run)
    data = None
    if args.dataset:
        data = _load_dataset(args.dataset, run, args.outcome)
        graph = fit_coefficients(graph, data)
    if args.outcome:
        if data is None:
            raise UsageError("--outcome needs --dataset")
        graph = attach_outcome(graph, data, args.outcome, cfg.alpha, cfg.max_cond_size)
        if data is not None:
            graph = fit_coefficients(graph, data)
        run.stage("graph_outcome.json", graph.to_json())
    profiles = node_profiles(graph, cfg.hub_min_degree, cfg.hub_percentile)
    run.stage("profiles.csv", _profiles_csv(profiles))
    if args.propagate:
        run.stage("propagation.json", _json(propagate(graph, args.propagate).to_dict()))
    modules = None
    if args.modules:
        modules = detect_modules(graph)
        run.stage("modules.json", _json(modules.to_dict()))
    run.stage("graph.dot", to_dot(graph, modules))
    run.stage("graph.graphml", to_graphml(graph))
    out = args.out or Path(args.graph).resolve().parent / "analysis"
    run.commit(out)
    return 0


def cmd_score(args) -> int:
    cfg = _config(args)
    run = Run("score", args, cfg)
    truth = SemSpec.load(run.read(args.truth))
    graph = _load_graph(args.graph, run)
    _emit(run, args, "score.json", _json(score_recovery(truth, graph).to_dict()))
    return 0


def cmd_export(args) -> int:
    cfg = _config(args)
    run = Run("export", args, cfg)
    graph = _load_graph(args.graph, run)
    text = render(graph, args.format)
    if args.out:
        out = Path(args.out)
        run.stage(out.name, text)
        run.commit(out.parent if str(out.parent) else ".")
    else:
        sys.stdout.write(text)
    return 0


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrnet", description="Instrument-based causal network discovery over omic data.")
    parser.add_argument("--version", action="version", version=f"mrnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="flat key = value config file; flags override it")
        p.add_argument("--threads", type=int, help="worker cap for CI testing")
        return p

    p = add("simulate", cmd_simulate, "draw a random linear SEM and sample a dataset")
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--degree", type=float, default=2.0)
    p.add_argument("--variants", type=int, help="default nodes * ivs-per-node")
    p.add_argument("--ivs-per-node", type=int, default=3)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = add("ivgen", cmd_ivgen, "generate and allocate genotype instruments")
    p.add_argument("--genotype", required=True)
    p.add_argument("--omics", required=True)
    p.add_argument("--max-ivs", type=int)
    p.add_argument("--f-threshold", type=float)
    p.add_argument("--outcome", help="omics column to treat as the outcome")
    p.add_argument("--rotation", choices=("none", "varimax"))
    p.add_argument("--out", required=True, help="output directory")

    p = add("learn", cmd_learn, "learn the causal network")
    p.add_argument("--dataset", required=True, help="dataset directory or dataset.json")
    p.add_argument("--ivs", required=True, help="ivgen output directory or ivs.csv")
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-cond-size", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = add("effects", cmd_effects, "path-product effect sizes")
    p.add_argument("--graph", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--all-pairs", action="store_true")
    p.add_argument("--out", help="output directory (default: print)")

    p = add("analyze", cmd_analyze, "degrees, hubs, propagation, modules, outcome")
    p.add_argument("--graph", required=True)
    p.add_argument("--propagate", metavar="NODE")
    p.add_argument("--modules", action="store_true")
    p.add_argument("--outcome", metavar="NAME")
    p.add_argument("--dataset", help="dataset for coefficients and --outcome")
    p.add_argument("--out", help="output directory (default: <graph dir>/analysis)")

    p = add("score", cmd_score, "compare a learned graph with the simulation truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", help="output directory (default: print)")

    p = add("export", cmd_export, "render a graph as DOT, GraphML or JSON")
    p.add_argument("--graph", required=True)
    p.add_argument("--format", choices=FORMATS, required=True)
    p.add_argument("--out", help="output file (default: print)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except MRNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
