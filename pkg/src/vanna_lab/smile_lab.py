"""Implied volatility smiles from mixing prices, ATM skew, zero-vanna points and maturity ladders."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import lognormal_oracle
from .bs_core import BSInputs, bs_vega, d_plus_minus, implied_vol, NoSolutionError
from .sv_engine import (
    EstimateWithError,
    GridSpec,
    ModelSpec,
    NEGLIGIBLE,
    SWAP_COLUMNS,
    control_coefficient,
    control_offsets,
    controlled_estimate,
    estimate,
    price_estimates,
    price_matrix,
    sample_matrix,
    swap_quantities,
)

MAX_IV_STD_ERROR = 0.01
MIN_POINTS = 5
STRIKE_COUNT = 13
STRIKE_HALF_WIDTH = 3.0
STRIKE_CLUSTERING = 1.5
SKEW_BANDWIDTH = 1.0
JACKKNIFE_GROUPS = 20
ZV_TOL = 1e-10
MIN_TAU = 1.0 / 1024
EXTRAPOLATION_NOISE_SHARE = 0.25


class SmileError(ValueError):
    pass


class SmilePriceError(SmileError):
    """A Monte Carlo price could not be inverted; carries the offending strike."""

    def __init__(self, message: str, strike: float):
        super().__init__(message)
        self.strike = strike


class NoisySmileError(SmileError):
    pass


class BandwidthError(SmileError):
    pass


class StrikeRangeError(SmileError):
    def __init__(self, message: str, side: str):
        super().__init__(message)
        self.side = side


class ExtrapolationRefused(ValueError):
    pass


@dataclass(frozen=True)
class SmilePoint:
    k: float
    iv: float
    iv_std_error: float


@dataclass(frozen=True)
class Smile:
    tau: float
    x: float
    points: tuple[SmilePoint, ...]

    def __post_init__(self):
        if len(self.points) < MIN_POINTS:
            raise SmileError(f"a smile needs at least {MIN_POINTS} points, got {len(self.points)}")
        k = self.k
        if np.any(np.diff(k) <= 0):
            raise SmileError("log strikes must be strictly increasing")
        if not k[0] < self.x < k[-1]:
            raise SmileError("the ATM log strike must lie strictly inside the strike range")

    @property
    def k(self) -> np.ndarray:
        return np.array([p.k for p in self.points])

    @property
    def iv(self) -> np.ndarray:
        return np.array([p.iv for p in self.points])

    @property
    def iv_std_error(self) -> np.ndarray:
        return np.array([p.iv_std_error for p in self.points])

    def interpolator(self) -> PchipInterpolator:
        return PchipInterpolator(self.k, self.iv, extrapolate=False)


@dataclass(frozen=True)
class SkewEstimate:
    i0: float
    slope: float
    slope_std_error: float


@dataclass(frozen=True)
class ZeroVannaPair:
    k_minus: float
    i_minus: float
    k_plus: float
    i_plus: float


def default_strikes(m: ModelSpec) -> list[float]:
    """13 strikes symmetric in log strike about the spot, spaced geometrically away from ATM."""
    half = (STRIKE_COUNT - 1) // 2
    width = STRIKE_HALF_WIDTH * m.sigma0 * math.sqrt(m.tau)
    g = STRIKE_CLUSTERING
    offsets = width * (g ** np.arange(1, half + 1) - 1.0) / (g**half - 1.0)
    k = np.concatenate([-offsets[::-1], [0.0], offsets]) + m.x
    return [float(v) for v in np.exp(k)]


def smile_from_prices(m: ModelSpec, strikes, prices, price_std_errors) -> Smile:
    points = []
    for strike, price, se in zip(strikes, prices, price_std_errors):
        try:
            iv = implied_vol(float(price), m.spot, float(strike), m.tau)
        except NoSolutionError as exc:
            raise SmilePriceError(f"strike {strike:.10g}: {exc}", float(strike)) from exc
        iv_se = float(se) / bs_vega(BSInputs(m.spot, float(strike), iv, m.tau))
        if iv_se > MAX_IV_STD_ERROR:
            raise NoisySmileError(
                f"strike {strike:.10g}: implied vol std error {iv_se:.3g} exceeds {MAX_IV_STD_ERROR}"
            )
        points.append(SmilePoint(math.log(strike), iv, iv_se))
    return Smile(m.tau, m.x, tuple(points))


def build_smile(m: ModelSpec, g: GridSpec, strikes, threads: int | None = None) -> Smile:
    """Mixing-estimator prices at ``strikes`` (one shared set of paths), inverted to implied vols."""
    strikes = sorted(float(s) for s in strikes)
    values = sample_matrix(m, g, price_matrix(m, strikes, g.control_variate), threads)
    ests = price_estimates(m, strikes, values, g.control_variate)
    return smile_from_prices(m, strikes, [e.value for e in ests], [e.std_error for e in ests])


def atm_skew(s: Smile, bandwidth: float | None = None) -> SkewEstimate:
    """Weighted least-squares quadratic in ``k - x`` over ``|k - x| <= bandwidth``.

    The default bandwidth is one ATM standard deviation, ``I(x) sqrt(tau)``.
    """
    if bandwidth is None:
        bandwidth = SKEW_BANDWIDTH * float(s.interpolator()(s.x)) * math.sqrt(s.tau)
    dk = s.k - s.x
    window = np.abs(dk) <= bandwidth * (1 + 1e-12)
    if window.sum() < MIN_POINTS:
        raise BandwidthError(
            f"only {int(window.sum())} smile points within bandwidth {bandwidth:.4g}; need {MIN_POINTS}"
        )
    d = dk[window]
    y = s.iv[window]
    se = s.iv_std_error[window]
    X = np.column_stack([np.ones_like(d), d, d * d])
    if np.all(se == 0):
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        dof = len(y) - 3
        resid = y - X @ coef
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        cov = s2 * np.linalg.inv(X.T @ X)
    else:
        se = np.where(se > 0, se, se[se > 0].min())
        w = 1.0 / se**2
        xtw = X.T * w
        cov = np.linalg.inv(xtw @ X)
        coef = cov @ (xtw @ y)
    return SkewEstimate(i0=float(coef[0]), slope=float(coef[1]), slope_std_error=float(math.sqrt(cov[1, 1])))


def _d_residual(x: float, k: float, iv: float, tau: float, sign: str) -> float:
    d_plus, d_minus = d_plus_minus(BSInputs(math.exp(x), math.exp(k), iv, tau))
    return d_minus if sign == "-" else d_plus


def zero_vanna_solve(s: Smile) -> ZeroVannaPair:
    """Log strikes where ``d-`` and ``d+`` of the interpolated smile vanish, with their vols."""
    interp = s.interpolator()
    sqrt_tau = math.sqrt(s.tau)
    k_nodes = s.k
    atm = int(np.searchsorted(k_nodes, s.x))

    def g(k: float, sign: str) -> float:
        iv = float(interp(k))
        total = iv * sqrt_tau
        half = 0.5 * total if sign == "+" else -0.5 * total
        return (s.x - k) / total + half

    result = {}
    for sign, order in (("-", range(atm - 1, -1, -1)), ("+", range(atm, len(k_nodes)))):
        # walk outward from ATM over nodes, bracketing with the ATM point itself
        inner = s.x
        g_inner = g(inner, sign)
        root = None
        for i in order:
            outer = float(k_nodes[i])
            if outer == inner:
                continue
            g_outer = g(outer, sign)
            if g_inner == 0.0:
                root = inner
                break
            if g_inner * g_outer <= 0:
                lo, hi = sorted((inner, outer))
                root = brentq(g, lo, hi, args=(sign,), xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
                break
            inner, g_inner = outer, g_outer
        if root is None:
            raise StrikeRangeError(f"d{sign} has no sign change on the smile's strike range", sign)
        iv = float(interp(root))
        if abs(_d_residual(s.x, root, iv, s.tau, sign)) >= ZV_TOL:
            raise SmileError(f"zero-vanna residual for d{sign} above {ZV_TOL}")
        result[sign] = (root, iv)
    return ZeroVannaPair(
        k_minus=result["-"][0], i_minus=result["-"][1], k_plus=result["+"][0], i_plus=result["+"][1]
    )


# ------------------------------------------------------------------ one maturity


@dataclass(frozen=True)
class Rung:
    """Everything measured at one maturity from one set of paths.

    ``*_se`` fields on smile-derived quantities are delete-one-group
    jackknife standard errors, which account for the strike-to-strike
    correlation induced by shared paths.
    """

    tau: float
    smile: Smile
    skew: SkewEstimate
    zero_vanna: ZeroVannaPair
    swaps: dict[str, EstimateWithError]
    slope_se: float
    i_minus_se: float
    i_plus_se: float
    zv_diff_se: float
    gap_minus: EstimateWithError
    gap_plus: EstimateWithError
    zv_swap_gap: EstimateWithError

    @property
    def zv_diff(self) -> float:
        return self.zero_vanna.i_plus - self.zero_vanna.i_minus

    @property
    def heavy_tail(self) -> bool:
        return any(e.heavy_tail for e in self.swaps.values())


def _smile_stats(m, strikes, prices, price_se, bandwidth):
    smile = smile_from_prices(m, strikes, prices, price_se)
    skew = atm_skew(smile, bandwidth)
    zv = zero_vanna_solve(smile)
    return smile, skew, zv


def _jackknife_se(full: np.ndarray, replicates: np.ndarray) -> np.ndarray:
    groups = replicates.shape[0]
    centred = replicates - replicates.mean(axis=0)
    return np.sqrt((groups - 1) / groups * (centred**2).sum(axis=0))


def run_rung(
    m: ModelSpec,
    g: GridSpec,
    strikes=None,
    groups: int = JACKKNIFE_GROUPS,
    threads: int | None = None,
) -> Rung:
    strikes = sorted(float(s) for s in (strikes if strikes is not None else default_strikes(m)))
    n_strikes = len(strikes)

    prices_of = price_matrix(m, strikes, g.control_variate)

    def evaluate(p):
        return np.column_stack([prices_of(p), swap_quantities(p)])

    values = sample_matrix(m, g, evaluate, threads)
    n = values.shape[0]
    n_price_cols = 2 * n_strikes if g.control_variate else n_strikes
    swap_cols = values[:, n_price_cols:]
    swaps = {name: estimate(swap_cols[:, j]) for j, name in enumerate(SWAP_COLUMNS)}
    bandwidth = SKEW_BANDWIDTH * m.sigma0 * math.sqrt(m.tau)

    # control coefficients are fitted once on the full sample and held fixed in the jackknife
    if g.control_variate:
        offsets = control_offsets(m, strikes)
        betas = np.array([control_coefficient(values[:, j], values[:, n_strikes + j]) for j in range(n_strikes)])
        price_est = [
            controlled_estimate(values[:, j], values[:, n_strikes + j], offsets[j], betas[j])
            for j in range(n_strikes)
        ]
    else:
        price_est = price_estimates(m, strikes, values, False)

    def prices_from_means(means):
        if not g.control_variate:
            return means[:n_strikes]
        return means[:n_strikes] - betas * (means[n_strikes:n_price_cols] - offsets)

    prices = np.array([e.value for e in price_est])
    price_se = np.array([e.std_error for e in price_est])
    smile, skew, zv = _smile_stats(m, strikes, prices, price_se, bandwidth)

    def derived(skew, zv, swap_means):
        return np.array([
            skew.slope,
            zv.i_minus,
            zv.i_plus,
            zv.i_plus - zv.i_minus,
            swap_means[0] - zv.i_minus,
            swap_means[1] - zv.i_plus,
            (zv.i_plus - zv.i_minus) - m.rho * swap_means[3],
        ])

    full = derived(skew, zv, [swaps[c].value for c in SWAP_COLUMNS])
    groups = max(2, min(groups, n))
    edges = np.linspace(0, n, groups + 1).astype(int)
    group_sums = np.add.reduceat(values, edges[:-1], axis=0)
    group_sizes = np.diff(edges)
    total = values.sum(axis=0)
    reps = []
    for j in range(groups):
        means = (total - group_sums[j]) / (n - group_sizes[j])
        _, skew_j, zv_j = _smile_stats(m, strikes, prices_from_means(means), price_se, bandwidth)
        reps.append(derived(skew_j, zv_j, means[n_price_cols:]))
    se = _jackknife_se(full, np.array(reps))

    def est(i):
        return EstimateWithError(float(full[i]), float(se[i]), n)

    return Rung(
        tau=m.tau,
        smile=smile,
        skew=skew,
        zero_vanna=zv,
        swaps=swaps,
        slope_se=float(se[0]),
        i_minus_se=float(se[1]),
        i_plus_se=float(se[2]),
        zv_diff_se=float(se[3]),
        gap_minus=est(4),
        gap_plus=est(5),
        zv_swap_gap=est(6),
    )


@dataclass(frozen=True)
class SwapApproxReport:
    tau: float
    vol_swap_minus_i_minus: EstimateWithError
    dual_vol_swap_minus_i_plus: EstimateWithError
    zv_diff: EstimateWithError
    rho_sigma_dW: EstimateWithError
    zv_diff_minus_rho_sigma_dW: EstimateWithError
    heavy_tail: bool


def swap_report(m: ModelSpec, rung: Rung) -> SwapApproxReport:
    s = rung.swaps["sigma_dW_expectation"]
    return SwapApproxReport(
        tau=rung.tau,
        vol_swap_minus_i_minus=rung.gap_minus,
        dual_vol_swap_minus_i_plus=rung.gap_plus,
        zv_diff=EstimateWithError(rung.zv_diff, rung.zv_diff_se, rung.gap_minus.n),
        rho_sigma_dW=EstimateWithError(m.rho * s.value, abs(m.rho) * s.std_error, s.n, s.heavy_tail),
        zv_diff_minus_rho_sigma_dW=rung.zv_swap_gap,
        heavy_tail=rung.heavy_tail,
    )


def check_swap_approximations(
    m: ModelSpec, g: GridSpec, strikes=None, threads: int | None = None
) -> SwapApproxReport:
    """Volatility swaps against zero-vanna vols, and ``I+ - I-`` against ``rho E[sigma_{t,T} int sigma dW]``."""
    return swap_report(m, run_rung(m, g, strikes, threads=threads))


# ------------------------------------------------------------------ maturity ladder


def rung_seed(master: int, index: int) -> int:
    state = np.random.SeedSequence(master, spawn_key=(index,)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def extrapolate_affine(taus, values, std_errors) -> tuple[float, float, float]:
    """Weighted least-squares fit ``q = q0 + c tau``; returns ``(q0, se(q0), c)``.

    Falls back to unit weights when any standard error is zero.
    """
    taus = np.asarray(taus, dtype=float)
    y = np.asarray(values, dtype=float)
    se = np.asarray(std_errors, dtype=float)
    X = np.column_stack([np.ones_like(taus), taus])
    if np.all(se > 0):
        w = 1.0 / se**2
    else:
        w = np.ones_like(y)
    xtw = X.T * w
    inv = np.linalg.inv(xtw @ X)
    coef = inv @ (xtw @ y)
    # covariance of the estimator under the stated per-point errors
    A = inv @ xtw
    cov = (A * se**2) @ A.T
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0))), float(coef[1])


def check_extrapolation_noise(name: str, values, std_errors) -> None:
    """Refuse to extrapolate a ladder whose noise swamps its values.

    The scale is the larger of the ladder's spread and its largest magnitude;
    ladders indistinguishable from zero everywhere, statistically or to
    rounding, are exempt.
    """
    values = np.asarray(values, dtype=float)
    std_errors = np.asarray(std_errors, dtype=float)
    if np.all(np.abs(values) <= 3 * std_errors + NEGLIGIBLE):
        return
    scale = max(float(np.ptp(values)), float(np.abs(values).max()))
    worst = float(std_errors.max())
    if worst > EXTRAPOLATION_NOISE_SHARE * scale:
        raise ExtrapolationRefused(
            f"{name}: std error {worst:.3g} exceeds {EXTRAPOLATION_NOISE_SHARE:.0%} of ladder scale {scale:.3g}"
        )


@dataclass(frozen=True)
class LimitReport:
    taus: list[float]
    q_skew: list[EstimateWithError]
    q_cov: list[EstimateWithError]
    q_zv: list[EstimateWithError]
    extrapolated: tuple[EstimateWithError, EstimateWithError, EstimateWithError]
    reference_slope: float
    rungs: list[Rung] = field(default_factory=list, repr=False)


def limit_experiment(
    m: ModelSpec,
    g: GridSpec,
    taus,
    strikes_per_tau=None,
    threads: int | None = None,
) -> LimitReport:
    """Normalised skew, return/vol covariance and zero-vanna spread along a decreasing maturity ladder.

    Each maturity gets its own seed derived from ``g.seed``; ``strikes_per_tau``
    maps a maturity to its strike list (default :func:`default_strikes`).
    """
    taus = [float(t) for t in taus]
    if not taus:
        raise ValueError("the maturity ladder is empty")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("maturities must be strictly decreasing")
    if taus[-1] < MIN_TAU:
        raise ValueError(f"smallest maturity {taus[-1]:.6g} is below the floor {MIN_TAU:.6g}")

    rungs = []
    for i, tau in enumerate(taus):
        m_tau = m.with_tau(tau)
        g_tau = GridSpec(
            paths=g.paths,
            seed=rung_seed(g.seed, i),
            steps=g.steps,
            antithetic=g.antithetic,
            control_variate=g.control_variate,
        )
        strikes = strikes_per_tau(tau) if callable(strikes_per_tau) else (
            strikes_per_tau[i] if strikes_per_tau is not None else None
        )
        rungs.append(run_rung(m_tau, g_tau, strikes, threads=threads))

    q_skew, q_cov, q_zv = [], [], []
    for r in rungs:
        norm = m.sigma0**2 * r.tau
        cov = r.swaps["return_vol_covariance"]
        n = cov.n
        q_skew.append(EstimateWithError(r.skew.slope, r.slope_se, n))
        q_cov.append(EstimateWithError(cov.value / norm, cov.std_error / norm, n, cov.heavy_tail))
        q_zv.append(EstimateWithError(r.zv_diff / norm, r.zv_diff_se / norm, n))

    extrapolated = []
    for name, seq in (("q_skew", q_skew), ("q_cov", q_cov), ("q_zv", q_zv)):
        vals = [e.value for e in seq]
        ses = [e.std_error for e in seq]
        check_extrapolation_noise(name, vals, ses)
        q0, q0_se, _ = extrapolate_affine(taus, vals, ses)
        extrapolated.append(EstimateWithError(q0, q0_se, len(taus)))

    return LimitReport(
        taus=taus,
        q_skew=q_skew,
        q_cov=q_cov,
        q_zv=q_zv,
        extrapolated=tuple(extrapolated),
        reference_slope=lognormal_oracle.slope_limit(m.rho, m.alpha),
        rungs=rungs,
    )


def convergence_order(taus, gaps: list[EstimateWithError]) -> tuple[float, float]:
    """Log-log slope of ``|gap|`` against ``tau`` by weighted least squares; returns ``(order, se)``.

    Per-point log errors come from the delta method, ``se / |gap|``.
    """
    taus = np.asarray(taus, dtype=float)
    mag = np.array([abs(e.value) for e in gaps])
    se = np.array([e.std_error for e in gaps])
    log_se = np.where(mag > 0, se / np.where(mag > 0, mag, 1.0), np.inf)
    log_se = np.where(log_se > 0, log_se, np.min(log_se[log_se > 0], initial=1.0))
    keep = np.isfinite(log_se)
    if keep.sum() < 2:
        return math.nan, math.inf
    x = np.log(taus[keep])
    y = np.log(mag[keep])
    w = 1.0 / log_se[keep] ** 2
    X = np.column_stack([np.ones_like(x), x])
    xtw = X.T * w
    inv = np.linalg.inv(xtw @ X)
    coef = inv @ (xtw @ y)
    return float(coef[1]), float(math.sqrt(inv[1, 1]))
