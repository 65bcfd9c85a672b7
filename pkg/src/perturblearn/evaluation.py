"""Out-of-distribution regression checks for learned graphs.

Targets are ``y = exp(a_target)``; every regressor is trained on ``log y``
and its predictions are exponentiated before scoring with MSLE.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import CausalGraph, markov_blanket
from .regressors import ConstantRegressor, fit_regressor
from .scm import ScmSpec, evaluate, sample_latent

FEATURE_KINDS = ("all_props", "blanket", "blanket_plus_latents", "full_z")
SETTINGS = ("retrain", "transfer")
REPORT_HEADER = ["feature_set", "split", "setting", "regressor", "alpha", "delta", "msle_mean", "msle_std", "n_feat"]


def msle(predictions, targets) -> float:
    """``mean((log1p(max(pred, 0)) - log1p(target))**2)``."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("predictions and targets must be equal-length nonempty vectors")
    if (t < 0).any():
        raise ValueError("targets must be nonnegative")
    return float(np.mean((np.log1p(np.maximum(p, 0.0)) - np.log1p(t)) ** 2))


@dataclass(frozen=True)
class FeatureSet:
    kind: str
    attr_names: tuple[str, ...] = ()
    latent_indices: tuple[int, ...] = ()

    @property
    def n_feat(self) -> int:
        return len(self.attr_names) + len(self.latent_indices)


def build_feature_sets(attribute_names, latent_dim: int, graph: CausalGraph | None, target: str, kinds=FEATURE_KINDS):
    """Feature sets for predicting ``target``; blanket kinds need ``graph``."""
    names = list(attribute_names)
    if target not in names:
        raise KeyError(f"unknown target {target!r}")
    out = []
    for kind in kinds:
        if kind == "all_props":
            out.append(FeatureSet(kind, tuple(n for n in names if n != target)))
        elif kind == "full_z":
            out.append(FeatureSet(kind, (), tuple(range(latent_dim))))
        elif kind in ("blanket", "blanket_plus_latents"):
            mb = markov_blanket(graph, target)
            attrs = tuple(n for n in names if n in mb.blanket_attrs)
            lat = mb.direct_latents if kind == "blanket_plus_latents" else ()
            out.append(FeatureSet(kind, attrs, tuple(lat)))
        else:
            raise ValueError(f"unknown feature set kind {kind!r}")
    return out


@dataclass
class Split:
    name: str
    attrs: np.ndarray
    latents: np.ndarray
    target: np.ndarray

    def __len__(self):
        return len(self.target)

    def features(self, fs: FeatureSet, attribute_names) -> np.ndarray:
        cols = [list(attribute_names).index(n) for n in fs.attr_names]
        return np.hstack([self.attrs[:, cols], self.latents[:, list(fs.latent_indices)]])


def make_split(spec: ScmSpec, name: str, n_samples: int, seed: int, profile: str | None = None, target=None) -> Split:
    target = target or spec.target_attr
    Z = sample_latent(spec, n_samples, seed)
    A = evaluate(spec, Z, profile)
    return Split(name, A, Z, np.exp(A[:, spec.index(target)]))


def make_splits(spec: ScmSpec, n_samples: int, seed: int, target=None) -> list[Split]:
    """Base split first, then one split per shift profile, each with its own latent draw."""
    seeds = np.random.SeedSequence(seed).generate_state(1 + len(spec.shift_profiles))
    splits = [make_split(spec, "base", n_samples, int(seeds[0]), None, target)]
    for k, name in enumerate(spec.shift_profiles, start=1):
        splits.append(make_split(spec, name, n_samples, int(seeds[k]), name, target))
    return splits


@dataclass(frozen=True)
class EvalProtocol:
    setting: str = "transfer"
    n_train: int = 10
    repeats: int = 100
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        if self.n_train < 1 or self.repeats < 1:
            raise ValueError("n_train and repeats must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ReportRow:
    feature_set: str
    split: str
    setting: str
    regressor: str
    alpha: float | None
    delta: float | None
    msle_mean: float
    msle_std: float
    n_feat: int


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, k)) for k in REPORT_HEADER])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        rd = csv.DictReader(io.StringIO(text))
        if rd.fieldnames != REPORT_HEADER:
            raise ValueError(f"unexpected report header {rd.fieldnames}")
        rows = []
        for d in rd:
            rows.append(ReportRow(
                d["feature_set"], d["split"], d["setting"], d["regressor"],
                float(d["alpha"]) if d["alpha"] else None,
                float(d["delta"]) if d["delta"] else None,
                float(d["msle_mean"]), float(d["msle_std"]), int(d["n_feat"]),
            ))
        return cls(rows)

    def get(self, feature_set, split, setting) -> ReportRow:
        for r in self.rows:
            if (r.feature_set, r.split, r.setting) == (feature_set, split, setting):
                return r
        raise KeyError((feature_set, split, setting))


class _LogTargetModel:
    def __init__(self, kind, seed, params):
        self.kind, self.seed, self.params = kind, seed, params

    def fit(self, X, y):
        logy = np.log(y)
        if X.shape[1] == 0:
            self.model = ConstantRegressor().fit(X, logy)
        else:
            self.model = fit_regressor(self.kind, X, logy, seed=self.seed, **self.params)
        return self

    def predict(self, X):
        return np.exp(self.model.predict(X))


def _cell_seed(seed, *keys) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _retrain_cell(split, si, fs, names, protocol, regressor, params):
    n = len(split)
    if n < protocol.n_train + 1:
        raise ValueError(f"split {split.name!r} has {n} rows; retrain needs at least {protocol.n_train + 1}")
    X = split.features(fs, names)
    scores = []
    for rep in range(protocol.repeats):
        # same row draw for every feature set in a given (split, repeat)
        rng = np.random.default_rng(_cell_seed(protocol.seed, si, rep))
        perm = rng.permutation(n)
        tr, te = perm[: protocol.n_train], perm[protocol.n_train:]
        model = _LogTargetModel(regressor, _cell_seed(protocol.seed, si, rep, 1), params).fit(X[tr], split.target[tr])
        scores.append(msle(model.predict(X[te]), split.target[te]))
    scores = np.array(scores)
    sd = float(scores.std(ddof=1)) if len(scores) > 1 else 0.0
    return float(scores.mean()), sd


def transfer_split(base: Split, holdout_fraction: float, seed: int):
    """Row indices ``(train, holdout)`` of the base split."""
    n = len(base)
    n_hold = max(1, int(math.ceil(holdout_fraction * n)))
    if n - n_hold < 1:
        raise ValueError("base split too small for a holdout")
    perm = np.random.default_rng(_cell_seed(seed, 0xBA5E)).permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def run_protocol(
    spec: ScmSpec,
    graph: CausalGraph | None,
    target_attr: str | None,
    splits: list[Split],
    protocol: EvalProtocol,
    feature_sets: list[FeatureSet] | None = None,
    regressor: str = "linear",
    alpha: float | None = None,
    delta: float | None = None,
    workers: int = 1,
    regressor_params: dict | None = None,
) -> EvalReport:
    """Score each feature set with the retrain or transfer protocol.

    ``splits[0]`` is the base split. Empty feature sets fall back to the
    training mean of ``log y``.
    """
    target_attr = target_attr or spec.target_attr
    names = spec.attribute_names
    params = regressor_params or {}
    if feature_sets is None:
        feature_sets = build_feature_sets(names, spec.latent_dim, graph, target_attr)
    rows = []
    if protocol.setting == "retrain":
        cells = [(si, s, fs) for fs in feature_sets for si, s in enumerate(splits)]

        def run(cell):
            si, s, fs = cell
            return _retrain_cell(s, si, fs, names, protocol, regressor, params)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, cells))
        else:
            results = [run(c) for c in cells]
        for (si, s, fs), (m, sd) in zip(cells, results):
            rows.append(ReportRow(fs.kind, s.name, "retrain", regressor, alpha, delta, m, sd, fs.n_feat))
    else:
        base = splits[0]
        tr, ho = transfer_split(base, protocol.holdout_fraction, protocol.seed)

        def run(fs):
            Xb = base.features(fs, names)
            model = _LogTargetModel(regressor, _cell_seed(protocol.seed, 0xF17), params).fit(Xb[tr], base.target[tr])
            out = [msle(model.predict(Xb[ho]), base.target[ho])]
            for s in splits[1:]:
                out.append(msle(model.predict(s.features(fs, names)), s.target))
            return out

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, feature_sets))
        else:
            results = [run(fs) for fs in feature_sets]
        for fs, scores in zip(feature_sets, results):
            for s, m in zip(splits, scores):
                rows.append(ReportRow(fs.kind, s.name, "transfer", regressor, alpha, delta, m, 0.0, fs.n_feat))
    return EvalReport(rows)


# --------------------------------------------------------------------------
# Three-step model selection
# --------------------------------------------------------------------------


def argmin_config(scored):
    """First ``(config, score)`` pair with the lowest score (grid order breaks ties)."""
    best = None
    for cfg, score in scored:
        if best is None or score < best[1]:
            best = (cfg, score)
    if best is None:
        raise ValueError("empty grid")
    return best


@dataclass
class Selection:
    """Chosen configuration per feature set plus the final report."""

    transfer_choice: dict[str, tuple]  # kind -> (alpha, delta, regressor)
    retrain_choice: dict[str, str]  # kind -> regressor
    graphs: dict[str, CausalGraph | None]
    report: EvalReport


def select_models(
    spec: ScmSpec,
    graphs: dict[tuple[float, float], CausalGraph],
    splits: list[Split],
    regressors=("linear", "forest", "rbf_kernel_ridge"),
    protocol: EvalProtocol | None = None,
    target_attr: str | None = None,
    kinds=FEATURE_KINDS,
    workers: int = 1,
) -> Selection:
    """Pick hyperparameters per feature set.

    1. Transfer models are scored on the base holdout; the lowest error
       fixes (alpha, delta, regressor) for each feature set. Graph-free
       feature sets vary only the regressor.
    2. Those models are reported on every split.
    3. With the chosen graph held fixed, the retrain regressor is the one
       with the lowest base-split retrain error.

    ``graphs`` maps ``(alpha, delta)`` to a learned graph, in grid order;
    grid points whose graph could not be learned are simply absent.
    """
    protocol = protocol or EvalProtocol()
    target_attr = target_attr or spec.target_attr
    names, d = spec.attribute_names, spec.latent_dim
    if not graphs:
        raise ValueError("no learnable graph in the grid")
    transfer = replace(protocol, setting="transfer")
    retrain = replace(protocol, setting="retrain")
    base_only = splits[:1]

    transfer_choice, retrain_choice, chosen_graphs = {}, {}, {}
    report = EvalReport()
    for kind in kinds:
        needs_graph = kind in ("blanket", "blanket_plus_latents")
        grid = list(graphs.items()) if needs_graph else [((None, None), None)]
        scored = []
        for (a, dl), g in grid:
            fs = build_feature_sets(names, d, g, target_attr, kinds=(kind,))
            for reg in regressors:
                r = run_protocol(spec, g, target_attr, base_only, transfer, fs, reg, a, dl, workers)
                scored.append(((a, dl, reg), r.rows[0].msle_mean))
        (a, dl, reg), _ = argmin_config(scored)
        g = graphs[(a, dl)] if needs_graph else None
        transfer_choice[kind], chosen_graphs[kind] = (a, dl, reg), g
        fs = build_feature_sets(names, d, g, target_attr, kinds=(kind,))
        report.rows.extend(run_protocol(spec, g, target_attr, splits, transfer, fs, reg, a, dl, workers).rows)

        scored = []
        for reg2 in regressors:
            r = run_protocol(spec, g, target_attr, base_only, retrain, fs, reg2, a, dl, workers)
            scored.append((reg2, r.rows[0].msle_mean))
        reg2, _ = argmin_config(scored)
        retrain_choice[kind] = reg2
        report.rows.extend(run_protocol(spec, g, target_attr, splits, retrain, fs, reg2, a, dl, workers).rows)
    return Selection(transfer_choice, retrain_choice, chosen_graphs, report)
