"""Undiscounted Black-Scholes analytics in log coordinates.

Scalar entry points validate their inputs; the ``*_array`` variants are the
vectorised kernels used by the Monte Carlo engine and skip validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

IV_LOWER = 1e-8
IV_UPPER = 5.0
IV_MAX_ITER = 100


class ImpliedVolError(ValueError):
    """Base class for implied volatility inversion failures."""


class NoSolutionError(ImpliedVolError):
    """Price outside the open no-arbitrage interval ``((S-K)+, S)``."""


class ConvergenceError(ImpliedVolError):
    """Iteration cap hit; ``best`` holds the last iterate."""

    def __init__(self, message: str, best: float):
        super().__init__(message)
        self.best = best


def norm_cdf(x):
    """Standard normal CDF via ``erfc``; accurate to ~1e-16 relative in both tails."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / _SQRT2)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _ncdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def _npdf(x: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


@dataclass(frozen=True)
class BSInputs:
    spot: float
    strike: float
    vol: float
    tau: float

    def __post_init__(self):
        for name in ("spot", "strike", "vol", "tau"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def log_coords(self) -> "LogCoords":
        return LogCoords(math.log(self.spot), math.log(self.strike))


@dataclass(frozen=True)
class LogCoords:
    """Log spot ``x`` and log strike ``k``."""

    x: float
    k: float

    @property
    def spot(self) -> float:
        return math.exp(self.x)

    @property
    def strike(self) -> float:
        return math.exp(self.k)


def _d_pair(log_moneyness: float, total_vol: float) -> tuple[float, float]:
    d_minus = log_moneyness / total_vol - 0.5 * total_vol
    return d_minus + total_vol, d_minus


def d_plus_minus(b: BSInputs) -> tuple[float, float]:
    """``(d+, d-)`` for the inputs; ``d+ - d-`` equals ``vol*sqrt(tau)``."""
    return _d_pair(math.log(b.spot / b.strike), b.vol * math.sqrt(b.tau))


def _price(spot: float, strike: float, total_vol: float) -> float:
    d_plus, d_minus = _d_pair(math.log(spot / strike), total_vol)
    price = spot * _ncdf(d_plus) - strike * _ncdf(d_minus)
    return max(price, max(spot - strike, 0.0))


def bs_price(b: BSInputs) -> float:
    """Undiscounted call price ``S N(d+) - K N(d-)``."""
    return _price(b.spot, b.strike, b.vol * math.sqrt(b.tau))


def bs_vega(b: BSInputs) -> float:
    """Derivative of :func:`bs_price` with respect to ``vol``."""
    d_plus, _ = d_plus_minus(b)
    return b.spot * _npdf(d_plus) * math.sqrt(b.tau)


def bs_price_array(spot, strike, vol, tau):
    """Vectorised call price; ``vol == 0`` gives intrinsic value."""
    spot = np.asarray(spot, dtype=float)
    strike = np.asarray(strike, dtype=float)
    total_vol = np.asarray(vol, dtype=float) * np.sqrt(tau)
    intrinsic = np.maximum(spot - strike, 0.0)
    safe = np.where(total_vol > 0, total_vol, 1.0)
    d_minus = np.log(spot / strike) / safe - 0.5 * safe
    price = spot * norm_cdf(d_minus + safe) - strike * norm_cdf(d_minus)
    return np.where(total_vol > 0, np.maximum(price, intrinsic), intrinsic)


def implied_vol(price: float, spot: float, strike: float, tau: float) -> float:
    """Invert :func:`bs_price` in ``vol``.

    Works on the out-of-the-money side (a put by parity when ``strike < spot``)
    with safeguarded Newton on the log price: vega steps leaving the current
    bisection bracket, initially ``[1e-8, 5]``, fall back to bisection.
    """
    for name, value in (("spot", spot), ("strike", strike), ("tau", tau)):
        if not (value > 0 and math.isfinite(value)):
            raise ValueError(f"{name} must be positive and finite, got {value!r}")
    intrinsic = max(spot - strike, 0.0)
    if not (intrinsic < price < spot):
        raise NoSolutionError(f"price {price!r} outside no-arbitrage interval ({intrinsic!r}, {spot!r})")
    if strike >= spot:
        s_otm, k_otm, target = spot, strike, price
    else:
        # put(S, K) = call(K, S)
        s_otm, k_otm, target = strike, spot, price - intrinsic
    sqrt_tau = math.sqrt(tau)
    log_m = math.log(s_otm / k_otm)

    def otm_price(vol):
        d_plus, d_minus = _d_pair(log_m, vol * sqrt_tau)
        return s_otm * _ncdf(d_plus) - k_otm * _ncdf(d_minus)

    lo, hi = IV_LOWER, IV_UPPER
    if otm_price(lo) >= target:
        raise NoSolutionError(f"price {price!r} requires vol below {IV_LOWER}")
    if otm_price(hi) <= target:
        raise NoSolutionError(f"price {price!r} requires vol above {IV_UPPER}")

    log_target = math.log(target)
    tol = max(1e-12, 1e-10 * spot)
    vol = min(max(math.sqrt(2.0 * abs(log_m) / tau), 0.2), hi)
    for _ in range(IV_MAX_ITER):
        c = otm_price(vol)
        if c == target:
            return vol
        if c > target:
            hi = vol
        else:
            lo = vol
        step = math.nan
        if c > 0:
            vega = s_otm * _npdf(_d_pair(log_m, vol * sqrt_tau)[0]) * sqrt_tau
            if vega > 0:
                step = vol - (math.log(c) - log_target) * c / vega
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        if abs(step - vol) <= 1e-15 * vol or hi - lo <= 4e-16 * hi:
            if abs(otm_price(step) - target) <= tol:
                return step
            break
        vol = step
    raise ConvergenceError(f"implied_vol did not converge in {IV_MAX_ITER} iterations", vol)


def zero_vanna_strike_flat(x: float, vol: float, tau: float, sign: str) -> float:
    """Log strike where ``d-`` (sign ``'-'``) or ``d+`` (sign ``'+'``) vanishes on a flat smile."""
    if not (vol > 0 and tau > 0):
        raise ValueError("vol and tau must be positive")
    half_var = 0.5 * vol * vol * tau
    if sign == "-":
        return x - half_var
    if sign == "+":
        return x + half_var
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")
