import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perturblearn.evaluation import (
    EvalProtocol,
    EvalReport,
    FeatureSet,
    argmin_config,
    build_feature_sets,
    make_splits,
    msle,
    run_protocol,
    select_models,
    transfer_split,
)
from perturblearn.cli import DEFAULT_ALPHAS, DEFAULT_DELTAS, graph_grid
from perturblearn.graph import CausalGraph, GraphConfig, influence_consistent, learn_graph, threshold_matrix
from perturblearn.perturb import PerturbConfig, run_perturbations
from perturblearn.scm import random_spec, with_shift_profiles
from perturblearn.sparse_fit import InfluenceMatrix, LassoConfig, fit_influence

from conftest import make_spec


def collider_spec():
    return make_spec(
        "ABCD", 5,
        edges=[("A", "C", 1.0), ("B", "C", -0.7), ("C", "D", 0.8)],
        loads=[("A", 0, 1.0), ("B", 1, 1.0), ("C", 2, 0.5), ("D", 3, 0.6)],
        profiles={"shift": {("A", "C"): -1.5}},
        target="C",
    )


def collider_graph():
    W = InfluenceMatrix(np.array([[1, 0, 0, 0], [0, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1.0]]), list("ABCD"), [0, 1, 2, 3])
    return learn_graph(W)


# -- msle ----------------------------------------------------------------------------


def test_msle_examples():
    assert msle([0.0], [0.0]) == 0.0
    assert msle([math.e - 1], [0.0]) == pytest.approx(1.0)
    assert msle([math.e**2 - 1], [math.e - 1]) == pytest.approx(1.0)
    assert msle([1.0, 3.0], [3.0, 1.0]) == pytest.approx(math.log(2) ** 2)
    # negative predictions are clamped at zero
    assert msle([-5.0], [0.0]) == 0.0


def test_msle_rejects_bad_input():
    with pytest.raises(ValueError):
        msle([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        msle([], [])
    with pytest.raises(ValueError):
        msle([1.0], [-1.0])


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(0, 1e6), st.floats(0, 1e6)), min_size=1, max_size=30), st.integers(0, 2**31))
def test_msle_permutation_and_duplication_invariant(pairs, seed):
    p, t = map(np.array, zip(*pairs))
    perm = np.random.default_rng(seed).permutation(len(p))
    base = msle(p, t)
    assert msle(p[perm], t[perm]) == pytest.approx(base, rel=1e-12, abs=1e-300)
    assert msle(np.tile(p, 2), np.tile(t, 2)) == pytest.approx(base, rel=1e-12, abs=1e-300)
    assert base >= 0


# -- feature sets ------------------------------------------------------------------


def test_feature_set_sizes():
    fs = {f.kind: f for f in build_feature_sets(list("ABCD"), 5, collider_graph(), "C")}
    assert fs["all_props"].attr_names == ("A", "B", "D")
    assert fs["blanket"].attr_names == ("A", "B", "D")
    assert fs["blanket_plus_latents"].latent_indices == (2,)
    assert {k: f.n_feat for k, f in fs.items()} == {"all_props": 3, "blanket": 3, "blanket_plus_latents": 4, "full_z": 5}


def test_feature_set_errors():
    with pytest.raises(KeyError):
        build_feature_sets(list("AB"), 2, None, "Z")
    with pytest.raises(ValueError):
        build_feature_sets(list("AB"), 2, None, "A", kinds=("nope",))


def test_split_layout():
    spec = collider_spec()
    splits = make_splits(spec, 50, seed=1)
    assert [s.name for s in splits] == ["base", "shift"]
    s = splits[0]
    assert s.attrs.shape == (50, 4) and s.latents.shape == (50, 5)
    np.testing.assert_array_equal(s.target, np.exp(s.attrs[:, 2]))
    X = s.features(FeatureSet("x", ("D", "A"), (4,)), spec.attribute_names)
    np.testing.assert_array_equal(X, np.column_stack([s.attrs[:, 3], s.attrs[:, 0], s.latents[:, 4]]))


def test_transfer_split_partitions_base():
    spec = collider_spec()
    base = make_splits(spec, 95, seed=0)[0]
    tr, ho = transfer_split(base, 0.1, seed=3)
    assert len(ho) == 10 and len(tr) == 85
    assert sorted(np.concatenate([tr, ho]).tolist()) == list(range(95))


# -- protocols -------------------------------------------------------------------------


def test_full_latents_transfer_is_near_exact_on_linear_scm():
    # the shift acts below the target, so log y stays the same linear map of z
    spec = make_spec(
        "ABCD", 5,
        edges=[("A", "C", 1.0), ("B", "C", -0.7), ("C", "D", 0.8)],
        loads=[("A", 0, 1.0), ("B", 1, 1.0), ("C", 2, 0.5), ("D", 3, 0.6)],
        profiles={"down": {("C", "D"): -2.0}},
        target="C",
    )
    splits = make_splits(spec, 300, seed=2)
    fs = build_feature_sets(spec.attribute_names, spec.latent_dim, None, "C", kinds=("full_z",))
    r = run_protocol(spec, None, "C", splits, EvalProtocol("transfer", seed=2), fs)
    assert [row.split for row in r.rows] == ["base", "down"]
    assert all(row.msle_mean < 1e-4 for row in r.rows)


def test_shift_into_target_breaks_latent_transfer():
    spec = collider_spec()
    r = run_protocol(spec, None, "C", make_splits(spec, 300, seed=2), EvalProtocol(seed=2),
                     [FeatureSet("full_z", (), tuple(range(5)))])
    assert r.get("full_z", "base", "transfer").msle_mean < 1e-4
    assert r.get("full_z", "shift", "transfer").msle_mean > 1e-2


def test_retrain_is_deterministic_across_workers():
    spec = collider_spec()
    splits = make_splits(spec, 60, seed=3)
    proto = EvalProtocol("retrain", repeats=20, seed=5)
    a = run_protocol(spec, collider_graph(), "C", splits, proto, regressor="forest").to_csv()
    b = run_protocol(spec, collider_graph(), "C", splits, proto, regressor="forest", workers=4).to_csv()
    assert a == b


def test_retrain_uses_common_row_draws():
    spec = collider_spec()
    splits = make_splits(spec, 60, seed=3)
    same = [FeatureSet("one", ("A", "B")), FeatureSet("two", ("A", "B"))]
    r = run_protocol(spec, None, "C", splits, EvalProtocol("retrain", repeats=15), same)
    assert r.get("one", "base", "retrain").msle_mean == r.get("two", "base", "retrain").msle_mean


def test_retrain_split_too_small():
    spec = collider_spec()
    splits = make_splits(spec, 10, seed=0)
    with pytest.raises(ValueError, match="at least 11"):
        run_protocol(spec, None, "C", splits, EvalProtocol("retrain"), [FeatureSet("all", ("A",))])


def test_empty_feature_set_predicts_training_mean():
    spec = collider_spec()
    splits = make_splits(spec, 100, seed=4)
    r = run_protocol(spec, None, "C", splits, EvalProtocol("transfer"), [FeatureSet("none")])
    assert r.rows[0].n_feat == 0 and np.isfinite(r.rows[0].msle_mean)


def test_doubling_repeats_stays_within_standard_error():
    spec = collider_spec()
    splits = make_splits(spec, 200, seed=6)[:1]
    fs = [FeatureSet("ab", ("A", "B"))]
    r1 = run_protocol(spec, None, "C", splits, EvalProtocol("retrain", repeats=100), fs).rows[0]
    r2 = run_protocol(spec, None, "C", splits, EvalProtocol("retrain", repeats=200), fs).rows[0]
    assert abs(r1.msle_mean - r2.msle_mean) < 2 * r1.msle_std / math.sqrt(100)


def test_report_csv_round_trip():
    spec = collider_spec()
    r = run_protocol(spec, collider_graph(), "C", make_splits(spec, 80, 1), EvalProtocol(), alpha=0.001, delta=0.1)
    text = r.to_csv()
    assert text.splitlines()[0] == "feature_set,split,setting,regressor,alpha,delta,msle_mean,msle_std,n_feat"
    assert EvalReport.from_csv(text).to_csv() == text
    assert len(r.rows) == 4 * 2


# -- selection -----------------------------------------------------------------------------


def test_argmin_config_keeps_first_tie():
    assert argmin_config([("a", 2.0), ("b", 1.0), ("c", 1.0)]) == ("b", 1.0)
    with pytest.raises(ValueError):
        argmin_config([])


def test_select_models_single_point_grid():
    spec = collider_spec()
    splits = make_splits(spec, 120, seed=7)
    proto = EvalProtocol(repeats=5)
    sel = select_models(spec, {(0.001, 0.1): collider_graph()}, splits, regressors=("linear",), protocol=proto)
    assert sel.transfer_choice["blanket"] == (0.001, 0.1, "linear")
    assert sel.transfer_choice["full_z"] == (None, None, "linear")
    assert set(sel.retrain_choice.values()) == {"linear"}
    assert len(sel.report.rows) == 4 * 2 * 2


def test_select_models_picks_lowest_holdout_error():
    spec = collider_spec()
    splits = make_splits(spec, 120, seed=8)
    empty = CausalGraph(list("ABCD"))
    graphs = {(0.0001, 0.1): empty, (0.001, 0.1): collider_graph()}
    proto = EvalProtocol(repeats=5)
    sel = select_models(spec, graphs, splits, regressors=("linear", "ridge"), protocol=proto, kinds=("blanket",))
    scores = {}
    for key, g in graphs.items():
        fs = build_feature_sets(spec.attribute_names, 5, g, "C", kinds=("blanket",))
        for reg in ("linear", "ridge"):
            scores[(*key, reg)] = run_protocol(spec, g, "C", splits[:1], proto, fs, reg).rows[0].msle_mean
    assert sel.transfer_choice["blanket"] == min(scores, key=scores.get)


def test_select_models_needs_a_graph():
    spec = collider_spec()
    with pytest.raises(ValueError):
        select_models(spec, {}, make_splits(spec, 30, 0))


def test_full_grid_selection_picks_influence_consistent_graph():
    spec = with_shift_profiles(random_spec(5, 5, 0.4, 0, seed=12, nonlinearity="tanh"), 1, seed=12)
    ds = run_perturbations(spec, PerturbConfig(samples_per_latent=400, seed=12))
    graphs = graph_grid(ds, DEFAULT_ALPHAS, DEFAULT_DELTAS)
    sel = select_models(spec, graphs, make_splits(spec, 100, 12), regressors=("linear",),
                        protocol=EvalProtocol(repeats=5), kinds=("blanket",))
    a, d, _ = sel.transfer_choice["blanket"]
    W = threshold_matrix(fit_influence(ds, LassoConfig(alpha=a)), GraphConfig(d))
    assert influence_consistent(sel.graphs["blanket"], W)
