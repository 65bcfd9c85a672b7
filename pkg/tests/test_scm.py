import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perturblearn.scm import (
    ScmSpec,
    SpecError,
    _evaluate_in_order,
    evaluate,
    influence_support,
    random_spec,
    sample_latent,
    shared_latent_pairs,
    topological_order,
    total_effects,
    with_shift_profiles,
)

from conftest import make_spec


def test_sample_latent_shape_and_determinism():
    spec = make_spec("A", 3, loads=[("A", 0, 1.0)])
    z = sample_latent(spec, 1, seed=7)
    assert z.shape == (1, 3)
    np.testing.assert_array_equal(sample_latent(spec, 5, 7), sample_latent(spec, 5, 7))


def test_sample_latent_moments():
    spec = make_spec("A", 2, loads=[("A", 0, 1.0)])
    z = sample_latent(spec, 10000, seed=123)
    assert np.all(np.abs(z.mean(axis=0)) < 0.05)
    assert np.all(np.abs(z.var(axis=0) - 1.0) < 0.1)


def test_sample_latent_rejects_zero_count():
    with pytest.raises(ValueError):
        sample_latent(make_spec("A", 1, loads=[("A", 0, 1.0)]), 0, 0)


def test_evaluate_single_attribute():
    spec = make_spec("A", 1, loads=[("A", 0, 2.0)])
    assert evaluate(spec, [1.0]).tolist() == [2.0]


def test_evaluate_chain():
    spec = make_spec("AB", 1, edges=[("A", "B", 3.0)], loads=[("A", 0, 1.0), ("B", 0, 0.0)])
    assert evaluate(spec, [1.0]).tolist() == [1.0, 3.0]


def test_evaluate_zero_latents_give_zero(chain_spec):
    assert np.all(evaluate(chain_spec, np.zeros(3)) == 0.0)


def test_evaluate_tanh():
    spec = make_spec("AB", 2, edges=[("A", "B", 0.5)], loads=[("A", 0, 1.0), ("B", 1, 2.0)], nonlinearity="tanh")
    a = np.tanh(0.3)
    assert np.allclose(evaluate(spec, [0.3, -0.2]), [a, np.tanh(0.5 * a - 0.4)])


def test_evaluate_checks_latent_length(chain_spec):
    with pytest.raises(SpecError):
        evaluate(chain_spec, [1.0, 2.0])


def test_unknown_profile(chain_spec):
    with pytest.raises(SpecError):
        evaluate(chain_spec, np.zeros(3), profile="nope")


def test_cyclic_spec_rejected_at_construction():
    with pytest.raises(SpecError, match="cycle"):
        make_spec("AB", 1, edges=[("A", "B", 1.0), ("B", "A", 1.0)], loads=[("A", 0, 1.0), ("B", 0, 1.0)])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(attrs="A", latent_dim=1, loads=[]),  # attribute without latent
        dict(attrs="A", latent_dim=1, loads=[("A", 3, 1.0)]),  # latent out of range
        dict(attrs="A", latent_dim=1, loads=[("A", 0, float("nan"))]),
        dict(attrs="AB", latent_dim=1, loads=[("A", 0, 1.0), ("B", 0, 1.0)], profiles={"s": {("A", "B"): 2.0}}),
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(SpecError):
        make_spec(**kwargs)


def test_any_topological_order_gives_identical_bits():
    spec = make_spec(
        "ABCD", 4,
        edges=[("A", "C", 0.7), ("B", "C", -1.1), ("C", "D", 0.9), ("A", "D", 0.3)],
        loads=[("A", 0, 1.0), ("B", 1, 1.0), ("C", 2, 0.6), ("D", 3, 1.2)],
        nonlinearity="tanh",
    )
    Z = sample_latent(spec, 50, 3)
    ref = _evaluate_in_order(spec, Z, None, topological_order(spec))
    for order in (list("BACD"), list("ABCD"), list("BACD")[::1]):
        np.testing.assert_array_equal(_evaluate_in_order(spec, Z, None, order), ref)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_linear_superposition(seed, n):
    spec = random_spec(n, n + 1, 0.5, 1 if n >= 2 else 0, seed)
    rng = np.random.default_rng(seed)
    z1, z2 = rng.standard_normal((2, spec.latent_dim))
    np.testing.assert_allclose(evaluate(spec, z1 + z2), evaluate(spec, z1) + evaluate(spec, z2), rtol=0, atol=1e-12)


def test_shift_profile_changes_only_magnitudes(chain_spec):
    spec = with_shift_profiles(chain_spec, 2, seed=4)
    base = spec.edge_matrix()
    for name in spec.shift_profiles:
        shifted = spec.edge_matrix(name)
        np.testing.assert_array_equal(shifted != 0, base != 0)
    assert np.any(spec.edge_matrix("shift1") != base)


def test_random_spec_minimal():
    spec = random_spec(1, 1, 0.0, 0, seed=0)
    assert spec.n_attrs == 1 and spec.latent_dim == 1 and spec.edges == ()


def test_random_spec_one_confounder():
    spec = random_spec(5, 6, 0.4, 1, seed=11)
    counts = {}
    for a in spec.latent_assignments:
        counts[a.latent] = counts.get(a.latent, 0) + 1
    assert sum(1 for c in counts.values() if c >= 2) == 1
    assert len(shared_latent_pairs(spec)) == 1
    assert all(abs(e.coeff) >= 0.5 for e in spec.edges)
    assert all(abs(a.coeff) >= 0.5 for a in spec.latent_assignments)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 3), st.floats(0, 1), st.integers(0, 2**31))
def test_random_spec_always_valid(n, extra, density, seed):
    c = min(extra, 0 if n < 2 else extra)
    spec = random_spec(n, n + extra, density, c, seed)
    order = topological_order(spec)
    assert sorted(order) == sorted(spec.attribute_names)
    # the designated target is a sink
    assert all(e.parent != spec.target_attr for e in spec.edges)
    assert ScmSpec.from_dict(spec.to_dict()) == spec


def test_random_spec_infeasible_confounders():
    with pytest.raises(ValueError):
        random_spec(3, 3, 0.5, 1, seed=0)
    with pytest.raises(ValueError):
        random_spec(1, 3, 0.5, 1, seed=0)


def test_json_round_trip(chain_spec):
    spec = with_shift_profiles(chain_spec, 1, seed=0)
    text = spec.to_json()
    back = ScmSpec.from_json(text)
    assert back == spec
    assert json.loads(back.to_json()) == json.loads(text)
    assert set(json.loads(text)) == {
        "attribute_names", "latent_dim", "edges", "latent_assignments",
        "nonlinearity", "shift_profiles", "target_attr",
    }


def test_total_effects_match_path_sums(chain_spec):
    T = total_effects(chain_spec)
    # z0 -> A -> B -> C : 1, 3, -6
    np.testing.assert_allclose(T[0], [1.0, 3.0, -6.0])
    np.testing.assert_allclose(T[2], [0.0, 0.0, 0.5])


def test_influence_support_is_descendant_closure(chain_spec):
    S = influence_support(chain_spec)
    assert S.tolist() == [[True, False, False], [True, True, False], [True, True, True]]
