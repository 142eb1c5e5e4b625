import pytest
from hypothesis import given, strategies as st

from vanna_lab.lognormal_oracle import (
    oracle_values,
    sigma_dW_small_tau,
    slope_limit,
    theorem_double_integral,
    slope_from_double_integral,
)

rhos = st.floats(-1.0, 1.0)
alphas = st.floats(0.0, 3.0)
positive = st.floats(1e-3, 2.0)


def test_slope_limit_examples():
    assert slope_limit(0.0, 0.6) == 0.0
    assert slope_limit(-0.7, 0.6) == pytest.approx(-0.105, abs=1e-15)
    assert slope_limit(1.0, 1.0) == 0.25


def test_slope_limit_rejects_bad_parameters():
    with pytest.raises(ValueError):
        slope_limit(1.5, 0.3)
    with pytest.raises(ValueError):
        slope_limit(0.5, -0.1)


def test_double_integral_examples():
    assert theorem_double_integral(0.2, 0.0, 0.5) == 0.0
    assert theorem_double_integral(0.2, 0.6, 1 / 52) == pytest.approx(4.4378698224852071e-6, abs=1e-10)


def test_sigma_dW_examples():
    assert sigma_dW_small_tau(0.2, 0.0, 0.5) == 0.0
    assert sigma_dW_small_tau(0.2, 0.6, 1 / 52) == pytest.approx(1.1538461538461538e-4, abs=1e-9)


def test_double_integral_matches_quadrature():
    # E[int_0^T int_s^T alpha sigma0^2 dr ds] by nested quadrature
    from scipy.integrate import dblquad

    sigma0, alpha, tau = 0.3, 0.8, 0.4
    value, _ = dblquad(lambda r, s: alpha * sigma0**2, 0.0, tau, lambda s: s, lambda s: tau)
    assert theorem_double_integral(sigma0, alpha, tau) == pytest.approx(value, rel=1e-12)


@given(rhos, positive, alphas, positive)
def test_theorem_rhs_equals_slope_limit(rho, sigma0, alpha, tau):
    assert slope_from_double_integral(rho, sigma0, alpha, tau) == pytest.approx(slope_limit(rho, alpha), abs=1e-14)


@given(rhos, positive, alphas, positive)
def test_sigma_dW_consistent_with_slope(rho, sigma0, alpha, tau):
    lhs = rho * sigma_dW_small_tau(sigma0, alpha, tau) / (sigma0**2 * tau)
    assert lhs == pytest.approx(slope_limit(rho, alpha), abs=1e-14)


@given(rhos, alphas, st.floats(0.1, 10.0))
def test_slope_linear(rho, alpha, c):
    assert slope_limit(rho, alpha) * c == pytest.approx(slope_limit(rho, alpha * c), rel=1e-12, abs=1e-300)
    if abs(rho * c) <= 1:
        assert slope_limit(rho * c, alpha) == pytest.approx(c * slope_limit(rho, alpha), rel=1e-12, abs=1e-300)


@given(positive, alphas, positive, st.floats(0.1, 10.0))
def test_tau_scaling(sigma0, alpha, tau, c):
    assert theorem_double_integral(sigma0, alpha, c * tau) == pytest.approx(
        c * c * theorem_double_integral(sigma0, alpha, tau), rel=1e-12, abs=1e-300
    )
    assert sigma_dW_small_tau(sigma0, alpha, c * tau) == pytest.approx(
        c * sigma_dW_small_tau(sigma0, alpha, tau), rel=1e-12, abs=1e-300
    )


def test_oracle_values_consistent():
    v = oracle_values(-0.7, 0.2, 0.6, 1 / 52)
    assert v.slope_limit == pytest.approx(v.slope_from_double_integral, abs=1e-14)
