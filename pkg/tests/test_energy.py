import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from wpflow.energy import (
    FlowParams,
    custom_model,
    power_law_model,
    psi_inverse_numeric,
    validate_hypotheses,
)
from wpflow.errors import ModelError, OutOfRangeError

GRID = np.logspace(-1, 1, 41)


@st.composite
def admissible_params(draw):
    p = draw(st.floats(1.1, 4.0))
    gamma = draw(st.floats(max(0.05, p - 1.0 + 0.05), 6.0))
    return FlowParams(p, gamma)


def test_conjugate_exponent():
    for p in (1.1, 1.5, 2.0, 3.0, 7.0):
        fp = FlowParams(p, 3.0 + p)
        assert abs(1 / fp.p + 1 / fp.q - 1) < 1e-14


@pytest.mark.parametrize("p, gamma", [(1.0, 1.0), (0.5, 1.0), (2.0, 0.0), (2.0, -1.0)])
def test_flow_params_rejects_bad_exponents(p, gamma):
    with pytest.raises(ModelError):
        FlowParams(p, gamma)


@pytest.mark.parametrize("p, gamma", [(2.0, 1.0), (3.0, 2.0), (2.5, 1.0)])
def test_power_law_rejects_non_invertible(p, gamma):
    with pytest.raises(ModelError):
        power_law_model(FlowParams(p, gamma))


def test_quadratic_closed_forms(quad_model):
    x = np.array([0.3, 1.0, 2.5])
    np.testing.assert_allclose(quad_model.H(x), x**2, rtol=1e-15)
    np.testing.assert_allclose(quad_model.h(x), 1 / x, rtol=1e-15)
    np.testing.assert_allclose(quad_model.psi(x), x**-2.0, rtol=1e-15)
    y = np.array([0.1, 4.0, 9.0])
    np.testing.assert_allclose(quad_model.psi_inverse(y), y**-0.5, rtol=1e-15)
    np.testing.assert_allclose(quad_model.psi(quad_model.psi_inverse(y)), y, rtol=1e-14)


def test_p15_gamma1_closed_forms():
    model = power_law_model(FlowParams(1.5, 1.0))
    x = np.array([0.2, 1.0, 3.0])
    np.testing.assert_allclose(model.H(x), (4 / 3) * x**1.5, rtol=1e-14)
    np.testing.assert_allclose(model.psi(x), (2 / 3) * x**-1.5, rtol=1e-14)


def test_pde_coefficient_identity_symbolic():
    p, g, u = sp.symbols("p gamma u", positive=True)
    m = g + 2 - p
    c = g / ((g + 1 - p) * m)
    assert sp.simplify(c * m * (m - 1) - g) == 0
    H = c * u**m
    assert sp.simplify(u * sp.diff(H, u, 2) - g * u ** (g + 1 - p)) == 0


def test_wasserstein_flux_matches_pde_symbolic():
    # u j_q(d/dx H'(u)) = j_q(d/dx u^gamma) where both gradients are positive
    p, g = sp.symbols("p gamma", positive=True)
    x = sp.symbols("x", real=True)
    u = sp.Function("u", positive=True)(x)
    m = g + 2 - p
    c = g / ((g + 1 - p) * m)
    v = sp.Symbol("v", positive=True)
    dH = c * m * v ** (m - 1)
    q1 = 1 / (p - 1)  # q - 1
    grad = sp.diff(dH.subs(v, u), x)
    flux_particles = u * grad**q1
    flux_pde = sp.diff(u**g, x) ** q1
    ux = sp.Symbol("ux", positive=True)
    ratio = (flux_particles / flux_pde).subs(sp.Derivative(u, x), ux)
    ratio = ratio.subs(u, sp.Symbol("w", positive=True))
    assert sp.simplify(sp.powsimp(sp.expand_power_base(ratio, force=True), force=True) - 1) == 0

    # the p = 2, gamma = 2 instance is the porous medium equation u_t = (u^2)_xx
    assert c.subs({p: 2, g: 2}) == 1


@settings(max_examples=60, deadline=None)
@given(admissible_params())
def test_psi_is_minus_h_prime(params):
    model = power_law_model(params)
    x = np.logspace(-1, 1, 17)
    eps = 1e-6 * x
    fd = -(model.h(x + eps) - model.h(x - eps)) / (2 * eps)
    np.testing.assert_allclose(model.psi(x), fd, rtol=1e-8)


@settings(max_examples=60, deadline=None)
@given(admissible_params())
def test_H_second_derivative_identity(params):
    model = power_law_model(params)
    x = np.logspace(-1, 1, 17)
    np.testing.assert_allclose(model.d2H(x), model.d2h(1 / x) * x**-3.0, rtol=1e-8)


@settings(max_examples=60, deadline=None)
@given(admissible_params())
def test_psi_decreasing_and_invertible(params):
    model = power_law_model(params)
    x = np.logspace(-2, 2, 101)
    psi = model.psi(x)
    assert np.all(np.diff(psi) < 0)
    np.testing.assert_allclose(model.psi_inverse(psi), x, rtol=1e-12)
    assert np.all(model.L_H(x) >= 0)


@settings(max_examples=40, deadline=None)
@given(admissible_params())
def test_power_law_passes_validation(params):
    assert validate_hypotheses(power_law_model(params), GRID).passed


def test_validation_quadratic_all_clauses(quad_model):
    report = validate_hypotheses(quad_model, np.linspace(0.1, 10, 100))
    assert report.passed
    x = np.linspace(0.1, 10, 100)
    assert np.all(quad_model.d2h(x) > 0)
    assert np.all(quad_model.dh(x) < 0)


def test_doubling_constant_beyond_one():
    # H(u) = c u^m with m > 2 needs A = 2^(m-1) > 1
    model = power_law_model(FlowParams(2.0, 3.0))
    assert model.doubling_constant == pytest.approx(2.0**2)
    assert validate_hypotheses(model, GRID)["doubling"].passed


def test_linear_energy_fails_superlinearity():
    params = FlowParams(2.0)
    model = custom_model(
        params,
        H=lambda u: u,
        dH=lambda u: np.ones_like(u),
        d2H=lambda u: np.zeros_like(u),
        name="linear",
    )
    report = validate_hypotheses(model, GRID)
    assert not report["superlinear"].passed
    assert not report.passed


def test_custom_model_matches_closed_form(quad_model):
    custom = custom_model(FlowParams(2.0), H=lambda u: u**2, dH=lambda u: 2 * u, d2H=lambda u: 2 + 0 * u)
    x = np.logspace(-1, 1, 21)
    np.testing.assert_allclose(custom.psi(x), quad_model.psi(x), rtol=1e-13)
    y = quad_model.psi(x)
    np.testing.assert_allclose(custom.psi_inverse(y), x, rtol=1e-12)
    assert validate_hypotheses(custom, GRID).passed


def test_psi_inverse_examples(quad_model):
    assert psi_inverse_numeric(quad_model, 4.0) == pytest.approx(0.5, rel=1e-15)
    assert psi_inverse_numeric(quad_model, float(quad_model.psi(1.0))) == pytest.approx(1.0, rel=1e-15)
    big = psi_inverse_numeric(quad_model, 1e-30)
    assert big == pytest.approx(1e15, rel=1e-12)


def test_psi_inverse_numeric_tolerance():
    custom = custom_model(FlowParams(2.0), H=lambda u: u**2 + u**3, dH=lambda u: 2 * u + 3 * u**2,
                          d2H=lambda u: 2 + 6 * u)
    y = np.logspace(-6, 6, 25)
    x = psi_inverse_numeric(custom, y)
    assert np.all(np.abs(custom.psi(x) - y) <= 1e-12 * np.maximum(1, y))


@pytest.mark.parametrize("y", [0.0, -1.0, np.inf, np.nan])
def test_psi_inverse_out_of_range(quad_model, y):
    with pytest.raises(OutOfRangeError):
        psi_inverse_numeric(quad_model, y)


def test_H_at_zero_exact():
    model = power_law_model(FlowParams(1.5, 0.7))
    assert float(model.H(0.0)) == 0.0
    assert np.isfinite(model.H(1e-320))


@pytest.mark.parametrize("grid", [[], [0.0, 1.0], [1.0, -1.0], [2.0, 1.0]])
def test_validation_rejects_bad_grids(quad_model, grid):
    with pytest.raises(ValueError):
        validate_hypotheses(quad_model, grid)
