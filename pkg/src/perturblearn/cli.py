"""``perturblearn`` command line.

Exit codes: 0 ok, 1 bad flags/config, 2 unreadable input file, 3 algorithm
error (for example a cycle before transitive reduction).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .evaluation import REPORT_HEADER, EvalProtocol, EvalReport, make_splits, run_protocol, select_models
from .fileio import (
    FormatError,
    dataset_from_csv,
    dataset_to_csv,
    matrix_from_csv,
    matrix_to_csv,
    write_manifest,
)
from .graph import CausalGraph, GraphConfig, GraphCycleError, learn_graph, markov_blanket, threshold_matrix
from .perturb import PerturbConfig, run_perturbations
from .regressors import REGRESSOR_KINDS
from .scm import ScmSpec, SpecError, random_spec, with_shift_profiles
from .sparse_fit import LassoConfig, fit_influence

COMMANDS = ("simulate", "perturb", "fit-influence", "learn-graph", "blanket", "evaluate", "select", "export-dot")

DEFAULT_ALPHAS = [0.0001, 0.0005, 0.001, 0.002]
DEFAULT_DELTAS = [0.1, 0.2, 0.25, 0.35]


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


@dataclass
class SimulateConfig:
    n_attrs: int = 5
    latent_dim: int = 6
    edge_density: float = 0.4
    confounder_count: int = 1
    nonlinearity: str = "linear"
    shift_profiles: int = 2


@dataclass
class EvalConfig:
    n_samples: int = 500
    n_train: int = 10
    repeats: int = 100
    holdout_fraction: float = 0.1
    regressor: str = "linear"
    settings: list = field(default_factory=lambda: ["retrain", "transfer"])


@dataclass
class GridConfig:
    alpha: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    delta: list = field(default_factory=lambda: list(DEFAULT_DELTAS))
    regressors: list = field(default_factory=lambda: ["linear", "forest", "rbf_kernel_ridge"])


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    paths: dict = field(default_factory=dict)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    perturb: dict = field(default_factory=lambda: {"B": 3.0, "samples_per_latent": 2000})
    lasso: dict = field(default_factory=lambda: {"alpha": 0.001, "max_iters": 10000, "tol": 1e-8})
    graph: dict = field(default_factory=lambda: {"threshold": 0.1})
    eval: EvalConfig = field(default_factory=EvalConfig)
    grid: GridConfig = field(default_factory=GridConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        nested = {"simulate": SimulateConfig, "eval": EvalConfig, "grid": GridConfig}
        plain = {"perturb", "lasso", "graph"}
        cfg = cls()
        known = {f.name for f in fields(cls)}
        for key, value in d.items():
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
            if key in nested:
                sub_known = {f.name for f in fields(nested[key])}
                bad = set(value) - sub_known
                if bad:
                    raise UsageError(f"unknown keys in {key!r}: {sorted(bad)}")
                setattr(cfg, key, nested[key](**value))
            elif key in plain:
                merged = dict(getattr(cfg, key))
                merged.update(value)
                setattr(cfg, key, merged)
            else:
                setattr(cfg, key, value)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    # typed views -----------------------------------------------------------

    def perturb_config(self) -> PerturbConfig:
        return PerturbConfig(seed=self.seed, **self.perturb)

    def lasso_config(self) -> LassoConfig:
        return LassoConfig(**self.lasso)

    def graph_config(self) -> GraphConfig:
        return GraphConfig(**self.graph)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--in", dest="inp", type=Path, help="input file")
    common.add_argument("--out", type=Path, help="output file")
    common.add_argument("--alpha", type=float, help="Lasso L1 strength")
    common.add_argument("--delta", type=float, help="graph sparsity threshold")
    common.add_argument("--seed", type=int)
    common.add_argument("--target", help="target attribute")
    common.add_argument("--graph", type=Path, help="causal graph JSON")
    common.add_argument("--spec", type=Path, help="SCM spec JSON")
    common.add_argument("--workers", type=int)

    parser = _Parser(prog="perturblearn", description="Causal graphs from latent perturbations.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "simulate": "generate a random SCM spec",
        "perturb": "run single-latent perturbations on a spec",
        "fit-influence": "fit the Lasso influence matrix",
        "learn-graph": "threshold and peel an influence matrix into a graph",
        "blanket": "print the Markov blanket of a node",
        "evaluate": "retrain/transfer regression report",
        "select": "grid search over alpha, delta and regressor",
        "export-dot": "render a graph as Graphviz DOT",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _load_config(args) -> RunConfig:
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        try:
            cfg = RunConfig.from_dict(raw)
        except TypeError as exc:
            raise UsageError(f"malformed config: {exc}") from exc
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.alpha is not None:
        cfg.lasso["alpha"] = args.alpha
    if args.delta is not None:
        cfg.graph["threshold"] = args.delta
    try:
        cfg.perturb_config()
        cfg.lasso_config()
        cfg.graph_config()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    if cfg.eval.regressor not in REGRESSOR_KINDS:
        raise UsageError(f"unknown regressor {cfg.eval.regressor!r}")
    return cfg


def _path(args, cfg, flag_value, key, what) -> Path:
    p = flag_value if flag_value is not None else cfg.paths.get(key)
    if p is None:
        raise UsageError(f"missing {what} path (flag or config paths.{key})")
    return Path(p)


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _load_spec(path):
    try:
        return ScmSpec.from_json(_read(path))
    except (json.JSONDecodeError, SpecError) as exc:
        raise InputError(f"cannot parse spec {path}: {exc}") from exc


def _load_graph(path):
    try:
        return CausalGraph.from_json(_read(path))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"cannot parse graph {path}: {exc}") from exc


def sidecar_path(dataset_path: Path) -> Path:
    return dataset_path.with_suffix(".scales.json")


def _load_dataset(path):
    side = sidecar_path(path)
    try:
        return dataset_from_csv(_read(path), _read(side) if side.exists() else None)
    except (FormatError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse dataset {path}: {exc}") from exc


def _load_matrix(path):
    try:
        return matrix_from_csv(_read(path))
    except FormatError as exc:
        raise InputError(f"cannot parse matrix {path}: {exc}") from exc


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _evaluate_report(spec, graph, target, cfg: RunConfig) -> EvalReport:
    splits = make_splits(spec, cfg.eval.n_samples, cfg.seed, target)
    report = EvalReport()
    for setting in cfg.eval.settings:
        protocol = EvalProtocol(setting, cfg.eval.n_train, cfg.eval.repeats, cfg.eval.holdout_fraction, cfg.seed)
        r = run_protocol(
            spec, graph, target, splits, protocol,
            regressor=cfg.eval.regressor,
            alpha=cfg.lasso["alpha"], delta=cfg.graph["threshold"],
            workers=cfg.workers,
        )
        report.rows.extend(r.rows)
    return report


def graph_grid(ds, alphas, deltas, workers=1):
    """``{(alpha, delta): graph}`` for every grid point whose graph is acyclic."""
    out = {}
    for a in alphas:
        W = fit_influence(ds, LassoConfig(alpha=a), workers=workers)
        for d in deltas:
            try:
                out[(a, d)] = learn_graph(threshold_matrix(W, GraphConfig(d)))
            except GraphCycleError:
                continue
    return out


def run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage() + "perturblearn: error: a subcommand is required")
    cfg = _load_config(args)
    cmd = args.command
    cfg_dict = cfg.to_dict()

    if cmd == "simulate":
        out = _path(args, cfg, args.out, "spec", "output spec")
        s = cfg.simulate
        spec = random_spec(s.n_attrs, s.latent_dim, s.edge_density, s.confounder_count, cfg.seed, s.nonlinearity)
        if s.shift_profiles:
            spec = with_shift_profiles(spec, s.shift_profiles, cfg.seed + 1)
        _write(out, spec.to_json() + "\n")
        write_manifest(cmd, cfg_dict, [], [out])

    elif cmd == "perturb":
        inp = _path(args, cfg, args.inp or args.spec, "spec", "input spec")
        out = _path(args, cfg, args.out, "dataset", "output dataset")
        spec = _load_spec(inp)
        ds = run_perturbations(spec, cfg.perturb_config(), workers=cfg.workers)
        text, side = dataset_to_csv(ds)
        _write(out, text)
        _write(sidecar_path(out), side + "\n")
        write_manifest(cmd, cfg_dict, [inp], [out, sidecar_path(out)])

    elif cmd == "fit-influence":
        inp = _path(args, cfg, args.inp, "dataset", "input dataset")
        out = _path(args, cfg, args.out, "matrix", "output matrix")
        ds = _load_dataset(inp)
        W = fit_influence(ds, cfg.lasso_config(), workers=cfg.workers)
        _write(out, matrix_to_csv(W))
        inputs = [inp] + ([sidecar_path(inp)] if sidecar_path(inp).exists() else [])
        write_manifest(cmd, cfg_dict, inputs, [out])

    elif cmd == "learn-graph":
        inp = _path(args, cfg, args.inp, "matrix", "input matrix")
        out = _path(args, cfg, args.out, "graph", "output graph")
        W = _load_matrix(inp)
        g = learn_graph(threshold_matrix(W, cfg.graph_config()))
        _write(out, g.to_json() + "\n")
        write_manifest(cmd, cfg_dict, [inp], [out])

    elif cmd == "blanket":
        inp = _path(args, cfg, args.graph or args.inp, "graph", "input graph")
        if not args.target:
            raise UsageError("blanket needs --target")
        g = _load_graph(inp)
        if args.target not in g.nodes:
            raise UsageError(f"unknown attribute {args.target!r}")
        mb = markov_blanket(g, args.target)
        rank = {n: i for i, n in enumerate(g.nodes)}
        result = {
            "attribute": mb.attribute,
            "blanket": sorted(mb.blanket_attrs, key=rank.__getitem__),
            "direct_latents": list(mb.direct_latents),
        }
        text = json.dumps(result)
        print(text)
        if args.out is not None:
            _write(args.out, text + "\n")
            write_manifest(cmd, cfg_dict, [inp], [args.out])

    elif cmd == "evaluate":
        spec_path = _path(args, cfg, args.spec, "spec", "input spec")
        graph_path = _path(args, cfg, args.graph or args.inp, "graph", "input graph")
        out = _path(args, cfg, args.out, "report", "output report")
        spec = _load_spec(spec_path)
        g = _load_graph(graph_path)
        target = args.target or spec.target_attr
        if target is None:
            raise UsageError("no target attribute (use --target or set target_attr in the SCM JSON)")
        report = _evaluate_report(spec, g, target, cfg)
        _write(out, report.to_csv())
        write_manifest(cmd, cfg_dict, [spec_path, graph_path], [out])

    elif cmd == "select":
        spec_path = _path(args, cfg, args.spec, "spec", "input spec")
        ds_path = _path(args, cfg, args.inp, "dataset", "input dataset")
        out = _path(args, cfg, args.out, "report", "output report")
        spec = _load_spec(spec_path)
        ds = _load_dataset(ds_path)
        target = args.target or spec.target_attr
        if not (cfg.grid.alpha and cfg.grid.delta and cfg.grid.regressors):
            raise UsageError("selection grids must be nonempty")
        graphs = graph_grid(ds, cfg.grid.alpha, cfg.grid.delta, cfg.workers)
        splits = make_splits(spec, cfg.eval.n_samples, cfg.seed, target)
        protocol = EvalProtocol("transfer", cfg.eval.n_train, cfg.eval.repeats, cfg.eval.holdout_fraction, cfg.seed)
        sel = select_models(spec, graphs, splits, tuple(cfg.grid.regressors), protocol, target, workers=cfg.workers)
        _write(out, sel.report.to_csv())
        choice_path = out.with_suffix(".selection.json")
        choice = {
            kind: {
                "alpha": a,
                "delta": d,
                "transfer_regressor": reg,
                "retrain_regressor": sel.retrain_choice[kind],
                "graph": sel.graphs[kind].to_dict() if sel.graphs[kind] is not None else None,
            }
            for kind, (a, d, reg) in sel.transfer_choice.items()
        }
        _write(choice_path, json.dumps(choice, indent=2) + "\n")
        write_manifest(cmd, cfg_dict, [spec_path, ds_path], [out, choice_path])

    elif cmd == "export-dot":
        inp = _path(args, cfg, args.graph or args.inp, "graph", "input graph")
        out = _path(args, cfg, args.out, "dot", "output DOT")
        g = _load_graph(inp)
        _write(out, g.to_dot())
        write_manifest(cmd, cfg_dict, [inp], [out])
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"perturblearn: {exc}", file=sys.stderr)
        return 2
    except (GraphCycleError, ValueError, KeyError) as exc:
        print(f"perturblearn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
