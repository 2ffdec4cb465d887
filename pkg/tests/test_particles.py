import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_min_norm, directional_violation, fd_gradient, manufactured_ties
from wpflow.energy import FlowParams, power_law_model
from wpflow.errors import DegenerateConfigurationError, LambdaError
from wpflow.particles import (
    DomainSpec,
    ParticleConfig,
    discrete_energy,
    discrete_slope,
    lambda_structure,
    minimal_selection,
    psi_vector,
    subgradient_element,
    subgradient_index_check,
    weighted_norm,
    weighted_pairing,
)

MODELS = [power_law_model(FlowParams(p, g)) for p, g in ((1.5, 1.0), (2.0, 2.0), (3.0, 3.0))]


def sorted_positions(min_size=2, max_size=20):
    gaps = st.lists(st.floats(0.05, 5.0), min_size=min_size - 1, max_size=max_size - 1)
    return st.builds(lambda s, g: s + np.concatenate(([0.0], np.cumsum(g))), st.floats(-10, 10), gaps)


# -- configurations -----------------------------------------------------------


def test_rejects_duplicates_and_short_inputs():
    with pytest.raises(DegenerateConfigurationError):
        ParticleConfig([0.0, 1.0, 1.0])
    with pytest.raises(DegenerateConfigurationError):
        ParticleConfig([0.0])
    with pytest.raises(DegenerateConfigurationError):
        ParticleConfig([2.0, 1.0], sort=False)


def test_interval_constraints():
    with pytest.raises(DegenerateConfigurationError):
        ParticleConfig([-1.5, 0.0, 1.0], DomainSpec.interval(1.0))
    with pytest.raises(DegenerateConfigurationError):
        ParticleConfig([-0.9, 0.0, 1.0], DomainSpec.interval(1.0, pinned=True))
    cfg = ParticleConfig([-0.5, 0.0, 0.7], DomainSpec.interval(1.0))
    np.testing.assert_allclose(cfg.gaps, [1.0, 0.5, 0.7, 0.6])
    pinned = ParticleConfig([-1.0, 0.2, 1.0], DomainSpec.interval(1.0, pinned=True))
    np.testing.assert_allclose(pinned.gaps, [1.2, 1.2, 0.8, 0.8])


def test_free_end_on_wall_is_degenerate():
    cfg = ParticleConfig([-1.0, 0.0, 0.5], DomainSpec.interval(1.0))
    with pytest.raises(DegenerateConfigurationError):
        _ = cfg.gaps


# -- energy -------------------------------------------------------------------


def test_energy_examples(quad_model):
    assert discrete_energy(ParticleConfig([0, 1, 2]), quad_model) == pytest.approx(1 / 3, rel=1e-15)
    assert discrete_energy(ParticleConfig([0, 1, 3]), quad_model) == pytest.approx(5 / 18, rel=1e-15)
    a = 0.7
    assert discrete_energy(ParticleConfig([-a, a]), quad_model) == pytest.approx(float(quad_model.h(4 * a)))


@settings(max_examples=80, deadline=None)
@given(sorted_positions(), st.sampled_from(MODELS))
def test_energy_forms_agree(x, model):
    # discrete_energy raises when its ball and h forms differ beyond 1e-12
    cfg = ParticleConfig(x)
    r = cfg.ball_sizes
    ball = np.sum(r * model.H(1.0 / (cfg.N * r)))
    assert discrete_energy(cfg, model) == pytest.approx(ball, rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(sorted_positions(), st.floats(-100, 100), st.sampled_from(MODELS))
def test_translation_invariance(x, shift, model):
    e0 = discrete_energy(ParticleConfig(x), model)
    assert discrete_energy(ParticleConfig(x + shift), model) == pytest.approx(e0, rel=1e-9)
    z = minimal_selection(ParticleConfig(x), model).z
    assert abs(z.sum()) <= 1e-9 * max(np.linalg.norm(z), 1e-300) * len(x) + 1e-12


@settings(max_examples=50, deadline=None)
@given(sorted_positions(min_size=3), st.randoms(use_true_random=False))
def test_energy_ignores_input_order(x, random):
    model = MODELS[1]
    shuffled = list(x)
    random.shuffle(shuffled)
    assert discrete_energy(ParticleConfig(shuffled), model) == discrete_energy(ParticleConfig(x), model)


# -- norms --------------------------------------------------------------------


def test_weighted_norm_examples():
    for e in (1.0, 1.5, 2.0, 7.0):
        assert weighted_norm([1, 1, 1], e) == pytest.approx(1.0)
    assert weighted_norm([3, 0, 0], 2) == pytest.approx(np.sqrt(3))
    assert weighted_pairing([1, 2], [3, 4]) == pytest.approx(5.5)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30).flatmap(
        lambda a: st.tuples(st.just(a), st.lists(st.floats(-1e3, 1e3), min_size=len(a), max_size=len(a)))
    ),
    st.floats(1.05, 8.0),
)
def test_holder(pair, p):
    x, y = np.array(pair[0]), np.array(pair[1])
    q = p / (p - 1)
    lhs = abs(weighted_pairing(x, y))
    assert lhs <= weighted_norm(x, p) * weighted_norm(y, q) * (1 + 1e-12) + 1e-12


# -- psi and tie structure ----------------------------------------------------


def test_psi_vector_examples(quad_model):
    psi = psi_vector(ParticleConfig([0, 1, 2, 3], DomainSpec.whole_line()), quad_model)
    assert psi[0] == 0 and psi[-1] == 0
    psi3 = psi_vector(ParticleConfig([0, 1, 2]), quad_model)
    np.testing.assert_allclose(psi3[1:-1], 1 / 3, rtol=1e-15)
    mirror = ParticleConfig([-0.5, 0.5], DomainSpec.interval(1.0))
    np.testing.assert_allclose(psi_vector(mirror, quad_model), 2 * (2 * np.array([1.0, 1.0, 1.0])) ** -2.0)


def test_lambda_structure_examples():
    assert lambda_structure(ParticleConfig([0, 1, 3])).n_free == 0
    assert lambda_structure(ParticleConfig([0, 1, 2])).n_free == 1
    ties = lambda_structure(ParticleConfig([0, 1, 2, 3, 5]))
    assert ties.n_free == 2
    assert ties.clusters == ((1, 2),)


def test_lambda_structure_tolerance():
    x = [0.0, 1.0, 2.0 + 1e-11]
    assert lambda_structure(ParticleConfig(x)).n_free == 1
    assert lambda_structure(ParticleConfig(x), tie_tol=0.0).n_free == 0


# -- subgradients -------------------------------------------------------------


def test_subgradient_example(quad_model):
    sel = subgradient_element(ParticleConfig([0, 1, 3]), quad_model)
    np.testing.assert_allclose(sel.z, [2 / 3, -7 / 12, -1 / 12], rtol=1e-14)
    fd = fd_gradient(ParticleConfig([0, 1, 3]), quad_model)
    np.testing.assert_allclose(sel.z, fd, rtol=1e-6)
    assert sel.z.sum() == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(minimal_selection(ParticleConfig([0, 1, 3]), quad_model).z, sel.z)


def test_slope_example(quad_model):
    cfg = ParticleConfig([0, 1, 3])
    expected = np.sqrt((4 / 9 + 49 / 144 + 1 / 144) / 3)
    assert discrete_slope(cfg, quad_model) == pytest.approx(expected, rel=1e-14)
    assert discrete_slope(cfg, quad_model, "paper_p") == pytest.approx(expected, rel=1e-14)


def test_slope_conventions_differ_off_p2():
    model = MODELS[2]
    cfg = ParticleConfig([0, 1, 3, 3.5])
    z = minimal_selection(cfg, model).z
    assert discrete_slope(cfg, model) == pytest.approx(weighted_norm(z, 1.5))
    assert discrete_slope(cfg, model, "paper_p") == pytest.approx(weighted_norm(z, 3.0))
    with pytest.raises(ValueError):
        discrete_slope(cfg, model, "other")


def test_stationary_pinned_grid_has_zero_slope(quad_model):
    cfg = ParticleConfig(np.linspace(-1, 1, 9), DomainSpec.interval(1.0, pinned=True))
    assert discrete_slope(cfg, quad_model) == pytest.approx(0.0, abs=1e-12)
    assert discrete_slope(cfg, quad_model, "paper_p") == pytest.approx(0.0, abs=1e-12)


def test_index_placement_resolved(quad_model):
    for model in MODELS:
        res = subgradient_index_check(model)
        assert res["convention"] == "statement"
        assert res["assembled_matches"]
        assert res["proof_error"] > 1e3 * res["statement_error"]


def test_distinct_lambdas_give_distinct_members(quad_model):
    cfg = ParticleConfig([0, 1, 2])
    zs = [subgradient_element(cfg, quad_model, {1: lam}).z for lam in (0.0, 0.3, 1.0)]
    assert not np.allclose(zs[0], zs[1]) and not np.allclose(zs[1], zs[2])
    for z in zs:
        assert directional_violation(cfg, quad_model, z) <= 0


def test_lambda_errors(quad_model):
    cfg = ParticleConfig([0, 1, 2])
    with pytest.raises(LambdaError):
        subgradient_element(cfg, quad_model, {1: 1.5})
    with pytest.raises(LambdaError):
        subgradient_element(cfg, quad_model, {0: 0.5})
    with pytest.raises(LambdaError):
        subgradient_element(cfg, quad_model, [0.5, 0.5])


def test_lambda_triplets_grouped_by_cluster(quad_model):
    cfg = ParticleConfig([0, 1, 2, 3, 5, 6, 7])
    sel = subgradient_element(cfg, quad_model, [0.1, 0.2, 0.3])
    assert sel.lambda_triplets == ({1: 0.1, 2: 0.2}, {5: 0.3})


def test_membership_outside_set_fails(quad_model):
    # a vector that is not a subgradient must fail the directional test
    cfg = ParticleConfig([0, 1, 3])
    z = subgradient_element(cfg, quad_model).z + np.array([0.5, 0.0, -0.5])
    assert directional_violation(cfg, quad_model, z) > 0


@pytest.mark.parametrize("seed", range(5))
def test_minimal_selection_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    for model in MODELS:
        N = int(rng.integers(5, 12))
        cfg = ParticleConfig(manufactured_ties(rng, N, int(rng.integers(1, 3)), max_run=3))
        q = model.params.q
        ours = weighted_norm(minimal_selection(cfg, model).z, q)
        coarse, fine, _ = brute_force_min_norm(cfg, model)
        assert ours <= coarse + 1e-12
        assert ours == pytest.approx(fine, abs=1e-9)


@pytest.mark.parametrize("domain", [DomainSpec.whole_line(), DomainSpec.interval(50.0)])
def test_slope_lower_bound_on_minimal_selections(domain):
    rng = np.random.default_rng(7)
    for _ in range(20):
        model = MODELS[int(rng.integers(3))]
        x = manufactured_ties(rng, int(rng.integers(3, 20)), 2) - 10.0
        sel = minimal_selection(ParticleConfig(x, domain), model)
        assert np.all(np.abs(sel.z) >= np.abs(sel.psi[:-1] - sel.psi[1:]) - 1e-9)
