"""Closed-form short-maturity reference values for lognormal instantaneous variance.

With ``d sigma^2 = alpha sigma^2 dW`` the Malliavin derivative of the variance is
``D_s sigma_r^2 = alpha sigma_r^2`` and the variance is a martingale, which is all
these formulas use.
"""

from __future__ import annotations

from dataclasses import dataclass


def slope_limit(rho: float, alpha: float) -> float:
    """Short-maturity ATM implied volatility slope in log strike, ``rho*alpha/4``."""
    if abs(rho) > 1 or alpha < 0:
        raise ValueError("need |rho| <= 1 and alpha >= 0")
    return rho * alpha / 4.0


def theorem_double_integral(sigma0: float, alpha: float, tau: float) -> float:
    """``E[int_t^T int_s^T D_s sigma_r^2 dr ds] = alpha sigma0^2 tau^2 / 2``."""
    return 0.5 * alpha * sigma0 * sigma0 * tau * tau


def slope_from_double_integral(rho: float, sigma0: float, alpha: float, tau: float) -> float:
    """Slope limit recovered from the double integral, ``rho/(2 sigma0^2) * I / tau^2``."""
    return rho / (2.0 * sigma0 * sigma0) * theorem_double_integral(sigma0, alpha, tau) / (tau * tau)


def sigma_dW_small_tau(sigma0: float, alpha: float, tau: float) -> float:
    """Leading-order ``E[sigma_{t,T} int sigma dW] ~ alpha sigma0^2 tau / 4``."""
    return 0.25 * alpha * sigma0 * sigma0 * tau


@dataclass(frozen=True)
class OracleValues:
    slope_limit: float
    sigma_dW_small_tau: float
    theorem_double_integral: float
    slope_from_double_integral: float


def oracle_values(rho: float, sigma0: float, alpha: float, tau: float) -> OracleValues:
    return OracleValues(
        slope_limit=slope_limit(rho, alpha),
        sigma_dW_small_tau=sigma_dW_small_tau(sigma0, alpha, tau),
        theorem_double_integral=theorem_double_integral(sigma0, alpha, tau),
        slope_from_double_integral=slope_from_double_integral(rho, sigma0, alpha, tau),
    )
