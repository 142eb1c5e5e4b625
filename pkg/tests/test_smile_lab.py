import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vanna_lab.bs_core import bs_price, BSInputs, d_plus_minus, zero_vanna_strike_flat
from vanna_lab.sv_engine import GridSpec, ModelSpec
from vanna_lab.smile_lab import (
    BandwidthError,
    ExtrapolationRefused,
    NoisySmileError,
    Smile,
    SmileError,
    SmilePoint,
    SmilePriceError,
    StrikeRangeError,
    atm_skew,
    build_smile,
    check_extrapolation_noise,
    check_swap_approximations,
    convergence_order,
    default_strikes,
    extrapolate_affine,
    limit_experiment,
    rung_seed,
    run_rung,
    smile_from_prices,
    zero_vanna_solve,
)

SKEWED = ModelSpec(1.0, 0.2, 0.6, -0.7, 1 / 12)
LADDER = [1 / 12, 1 / 26, 1 / 52, 1 / 126, 1 / 252]


def synthetic(f, k, tau=1.0, x=0.0, se=0.0):
    return Smile(tau, x, tuple(SmilePoint(float(v), float(f(v)), se) for v in k))


# ---------------------------------------------------------------- smile construction


def test_smile_invariants():
    k = np.linspace(-0.1, 0.1, 5)
    synthetic(lambda v: 0.2, k)
    with pytest.raises(SmileError):
        synthetic(lambda v: 0.2, k[:4])
    with pytest.raises(SmileError):
        synthetic(lambda v: 0.2, k[::-1])
    with pytest.raises(SmileError):
        synthetic(lambda v: 0.2, k, x=-0.1)


def test_default_strikes_shape():
    strikes = default_strikes(SKEWED)
    k = np.log(strikes)
    assert len(strikes) == 13
    assert k[6] == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(k + k[::-1], 0.0, atol=1e-15)
    assert k[-1] == pytest.approx(3 * 0.2 * math.sqrt(1 / 12))
    assert np.all(np.diff(np.diff(k[6:])) > 0)


def test_flat_smile_deterministic():
    m = ModelSpec(1.0, 0.2, 0.0, 0.0, 1 / 12)
    s = build_smile(m, GridSpec(paths=1000, seed=1), default_strikes(m))
    assert np.all(np.abs(s.iv - 0.2) < 1e-8)


def test_flat_smile_with_correlation():
    m = ModelSpec(1.0, 0.2, 0.0, -0.7, 1 / 12)
    for cv in (True, False):
        # with constant vol the price control is perfect, leaving only rounding error
        g = GridSpec(paths=100_000, seed=2, control_variate=cv)
        s = build_smile(m, g, default_strikes(m))
        assert np.all(np.abs(s.iv - 0.2) <= np.maximum(3 * s.iv_std_error, 1e-10))


def test_negative_skew_near_atm():
    s = build_smile(SKEWED, GridSpec(paths=100_000, seed=3), default_strikes(SKEWED))
    centre = slice(4, 9)
    assert np.all(np.diff(s.iv[centre]) < 0)


def test_price_outside_bounds_names_strike():
    m = ModelSpec(1.0, 0.2, 0.0, 0.0, 0.1)
    strikes = [0.9, 0.95, 1.0, 1.05, 1.1]
    prices = [bs_price(BSInputs(1.0, k, 0.2, 0.1)) for k in strikes]
    prices[1] = 0.05  # below intrinsic
    with pytest.raises(SmilePriceError) as info:
        smile_from_prices(m, strikes, prices, [0.0] * 5)
    assert info.value.strike == 0.95


def test_noisy_smile_rejected():
    m = ModelSpec(1.0, 0.2, 0.0, 0.0, 0.1)
    strikes = [0.9, 0.95, 1.0, 1.05, 1.1]
    prices = [bs_price(BSInputs(1.0, k, 0.2, 0.1)) for k in strikes]
    with pytest.raises(NoisySmileError):
        smile_from_prices(m, strikes, prices, [0.01] * 5)


# ---------------------------------------------------------------- skew


def test_flat_skew_exact():
    est = atm_skew(synthetic(lambda v: 0.3, np.linspace(-0.2, 0.2, 9)), bandwidth=0.2)
    assert est.slope == pytest.approx(0.0, abs=1e-14)
    assert est.i0 == pytest.approx(0.3, abs=1e-14)


def test_linear_skew_exact():
    est = atm_skew(synthetic(lambda v: 0.2 + 0.5 * v, np.linspace(-0.2, 0.2, 9)), bandwidth=0.2)
    assert est.slope == pytest.approx(0.5, abs=1e-12)
    assert est.i0 == pytest.approx(0.2, abs=1e-12)


def test_cubic_skew_taylor_bound():
    bw = 0.02
    s = synthetic(lambda v: 0.2 + 0.5 * v + 2 * v**3, np.linspace(-bw, bw, 9))
    est = atm_skew(s, bandwidth=bw)
    assert abs(est.slope - 0.5) <= 2 * bw**2 * 3 * 2


def test_skew_window_too_narrow():
    s = synthetic(lambda v: 0.2, np.linspace(-0.2, 0.2, 9))
    with pytest.raises(BandwidthError):
        atm_skew(s, bandwidth=0.06)


# ---------------------------------------------------------------- zero vanna


@pytest.mark.parametrize("c,tau", [(0.2, 1.0), (0.35, 0.25), (0.15, 1 / 52)])
def test_zero_vanna_flat(c, tau):
    half = 3 * c * math.sqrt(tau)
    s = synthetic(lambda v: c, np.linspace(-half, half, 13), tau=tau)
    zv = zero_vanna_solve(s)
    assert zv.k_minus == pytest.approx(zero_vanna_strike_flat(0.0, c, tau, "-"), abs=1e-12)
    assert zv.k_plus == pytest.approx(zero_vanna_strike_flat(0.0, c, tau, "+"), abs=1e-12)
    assert zv.i_minus == zv.i_plus == pytest.approx(c, abs=1e-15)


def test_zero_vanna_outside_range():
    s = synthetic(lambda v: 0.2, np.linspace(-0.01, 0.01, 7))
    with pytest.raises(StrikeRangeError) as info:
        zero_vanna_solve(s)
    assert info.value.side == "-"


def test_zero_vanna_model_flat():
    m = ModelSpec(1.0, 0.2, 0.0, -0.7, 1 / 12)
    rung = run_rung(m, GridSpec(paths=100_000, seed=4))
    zv = rung.zero_vanna
    assert abs(zv.i_minus - 0.2) <= 3 * rung.i_minus_se
    assert abs(zv.i_plus - 0.2) <= 3 * rung.i_plus_se
    # k- solves d-(i-, k-) = 0, i.e. k- = x - i-^2 tau / 2
    assert zv.k_minus == pytest.approx(zero_vanna_strike_flat(0.0, zv.i_minus, 1 / 12, "-"), abs=1e-10)


def test_zero_vanna_ordering_and_residuals():
    rung = run_rung(SKEWED, GridSpec(paths=100_000, seed=5))
    zv = rung.zero_vanna
    assert zv.k_minus < 0 < zv.k_plus
    assert zv.i_plus < zv.i_minus
    assert rung.zv_diff < -3 * rung.zv_diff_se
    d_minus = d_plus_minus(BSInputs(1.0, math.exp(zv.k_minus), zv.i_minus, 1 / 12))[1]
    d_plus = d_plus_minus(BSInputs(1.0, math.exp(zv.k_plus), zv.i_plus, 1 / 12))[0]
    assert abs(d_minus) < 1e-10 and abs(d_plus) < 1e-10


# ---------------------------------------------------------------- swap approximations


def test_swap_approximations_constant_vol():
    rep = check_swap_approximations(ModelSpec(1.0, 0.2, 0.0, -0.7, 1 / 52), GridSpec(paths=100_000, seed=6))
    for e in (rep.vol_swap_minus_i_minus, rep.dual_vol_swap_minus_i_plus, rep.zv_diff, rep.zv_diff_minus_rho_sigma_dW):
        assert abs(e.value) <= max(3 * e.std_error, 1e-12)


def test_swap_approximations_short_maturity():
    rep = check_swap_approximations(SKEWED.with_tau(1 / 52), GridSpec(paths=200_000, seed=7))
    assert abs(rep.vol_swap_minus_i_minus.value) < 1e-4
    assert abs(rep.dual_vol_swap_minus_i_plus.value) < 1e-4
    gap = rep.zv_diff_minus_rho_sigma_dW
    assert abs(gap.value) <= max(3 * gap.std_error, 0.1 * abs(rep.rho_sigma_dW.value))
    assert not rep.heavy_tail


# ---------------------------------------------------------------- ladder helpers


@given(
    st.floats(-1, 1),
    st.floats(-5, 5),
    st.lists(st.floats(1e-3, 1.0), min_size=2, max_size=8, unique=True),
)
def test_affine_fit_recovers_line(q0, c, taus):
    taus = sorted(taus, reverse=True)
    if taus[0] - taus[-1] < 1e-3:
        return
    values = [q0 + c * t for t in taus]
    fit_q0, se, fit_c = extrapolate_affine(taus, values, [1e-3] * len(taus))
    assert fit_q0 == pytest.approx(q0, abs=1e-9)
    assert fit_c == pytest.approx(c, abs=1e-8)
    assert se > 0


def test_affine_fit_error_matches_ols_formula():
    taus = np.array([1.0, 0.5, 0.25, 0.125])
    sigma = 0.01
    _, se, _ = extrapolate_affine(taus, np.zeros(4), [sigma] * 4)
    X = np.column_stack([np.ones(4), taus])
    assert se == pytest.approx(sigma * math.sqrt(np.linalg.inv(X.T @ X)[0, 0]), rel=1e-12)


def test_extrapolation_refusal():
    with pytest.raises(ExtrapolationRefused):
        check_extrapolation_noise("q", [0.10, 0.11, 0.12], [0.01, 0.05, 0.01])
    check_extrapolation_noise("q", [0.10, 0.11, 0.12], [0.001, 0.001, 0.001])
    check_extrapolation_noise("q", [1e-5, -1e-5, 2e-5], [1e-5, 1e-5, 1e-5])
    check_extrapolation_noise("q", [1e-14, -2e-15], [1e-16, 1e-15])


def test_rung_seeds():
    seeds = [rung_seed(42, i) for i in range(5)]
    assert len(set(seeds)) == 5
    assert seeds == [rung_seed(42, i) for i in range(5)]
    assert seeds != [rung_seed(43, i) for i in range(5)]
    assert all(0 <= s < 2**64 for s in seeds)


def test_convergence_order_of_power_law():
    from vanna_lab.sv_engine import EstimateWithError

    taus = np.array(LADDER)
    gaps = [EstimateWithError(3.0 * t**1.3, 0.01 * 3.0 * t**1.3, 100) for t in taus]
    order, se = convergence_order(taus, gaps)
    assert order == pytest.approx(1.3, abs=1e-12)
    assert se > 0


@pytest.mark.parametrize(
    "taus", [[], [1 / 52, 1 / 12], [1 / 12, 1 / 12], [1 / 12, 1 / 2048]]
)
def test_limit_experiment_validation(taus):
    with pytest.raises(ValueError):
        limit_experiment(SKEWED, GridSpec(paths=100, seed=1), taus)


# ---------------------------------------------------------------- limit experiments


def test_limit_uncorrelated_is_zero():
    m = ModelSpec(1.0, 0.2, 0.6, 0.0, 1 / 12)
    rep = limit_experiment(m, GridSpec(paths=40_000, seed=8), LADDER[:3])
    assert rep.reference_slope == 0.0
    for e in rep.extrapolated:
        assert abs(e.value) <= max(3 * e.std_error, 1e-12)


def test_limit_constant_vol_is_zero():
    m = ModelSpec(1.0, 0.2, 0.0, -0.7, 1 / 12)
    rep = limit_experiment(m, GridSpec(paths=40_000, seed=9), LADDER[:3])
    for seq in (rep.q_skew, rep.q_cov, rep.q_zv):
        assert len(seq) == 3
        for e in seq:
            assert abs(e.value) <= max(3 * e.std_error, 1e-12)


@pytest.fixture(scope="module")
def ladder():
    return limit_experiment(SKEWED, GridSpec(paths=200_000, seed=2024), LADDER)


def test_ladder_limits(ladder):
    assert ladder.reference_slope == pytest.approx(-0.105)
    for e in ladder.extrapolated:
        assert math.isfinite(e.value)
        assert abs(e.value + 0.105) <= max(3 * e.std_error, 0.05 * 0.105)


def test_ladder_cov_zv_difference_shrinks(ladder):
    # un-normalised q_cov - q_zv shrinks at least linearly, within error bars
    scale = [0.04 * t for t in LADDER]
    diff = [(a.value - b.value) * s for a, b, s in zip(ladder.q_cov, ladder.q_zv, scale)]
    err = [math.hypot(a.std_error, b.std_error) * s for a, b, s in zip(ladder.q_cov, ladder.q_zv, scale)]
    envelope = abs(diff[0]) + 3 * err[0]
    for t, d, e in zip(LADDER[1:], diff[1:], err[1:]):
        assert abs(d) <= envelope * t / LADDER[0] + 3 * e


def test_ladder_equidistance(ladder):
    ratios = []
    for rung in ladder.rungs:
        zv, i0, tau = rung.zero_vanna, rung.skew.i0, rung.tau
        ratios.append(abs((zv.i_plus - i0) + (zv.i_minus - i0)) / tau)
        assert (zv.k_plus - zv.k_minus) / (i0 * i0 * tau) == pytest.approx(1.0, abs=1e-4 * tau / LADDER[-1])
    assert max(ratios) < 1e-4


def test_ladder_skew_matches_zv_spread(ladder):
    # I0^2 tau slope - (I+ - I-) normalised by sigma0^2 tau vanishes within error bars
    for rung, qs, qz in zip(ladder.rungs, ladder.q_skew, ladder.q_zv):
        ratio = rung.skew.i0**2 / 0.04
        resid = ratio * qs.value - qz.value
        assert abs(resid) <= 3 * (ratio * qs.std_error + qz.std_error)


def test_ladder_sequences_monotone_within_errors(ladder):
    for seq in (ladder.q_skew, ladder.q_cov, ladder.q_zv):
        steps = [
            (b.value - a.value, 3 * math.hypot(a.std_error, b.std_error)) for a, b in zip(seq, seq[1:])
        ]
        up = all(d >= -tol for d, tol in steps)
        down = all(d <= tol for d, tol in steps)
        assert up or down


def test_ladder_gap_orders(ladder):
    for attr in ("gap_minus", "gap_plus"):
        order, se = convergence_order(LADDER, [getattr(r, attr) for r in ladder.rungs])
        assert order >= 0.8
        assert se < 0.2
