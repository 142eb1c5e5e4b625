"""Monte Carlo engine for the lognormal-variance stochastic volatility model.

The variance ``sigma_u^2 = sigma0^2 exp(alpha W_u - alpha^2 u / 2)`` is sampled
exactly on the grid; only the time integrals are discretised (trapezoid for
``int sigma^2 du``, left-point Ito sums for ``int sigma dW``). The spot's
idiosyncratic shock is integrated out analytically: given the W-path, the log
spot is Gaussian, so vanilla prices are averages of Black-Scholes prices
(the mixing estimator).

With antithetic sampling, sample ``i`` is the average over paths ``2i`` (W
increments as drawn) and ``2i+1`` (negated increments), and counts once in
standard errors.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import rng
from .bs_core import BSInputs, bs_price, bs_price_array

log = logging.getLogger(__name__)

CHUNK_SAMPLES = 4096
HEAVY_TAIL_SHARE = 0.01
# magnitudes at or below this are rounding residue of exactly cancelling estimators
NEGLIGIBLE = 1e-12
THREADS_ENV = "VANNA_LAB_THREADS"


def default_steps(tau: float) -> int:
    return max(64, math.ceil(512 * tau))


@dataclass(frozen=True)
class ModelSpec:
    spot: float
    sigma0: float
    alpha: float
    rho: float
    tau: float

    def __post_init__(self):
        if not self.spot > 0:
            raise ValueError(f"spot must be positive, got {self.spot!r}")
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0!r}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha!r}")
        if not abs(self.rho) <= 1:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho!r}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau!r}")

    @property
    def rho_bar(self) -> float:
        return math.sqrt(max(1.0 - self.rho * self.rho, 0.0))

    @property
    def x(self) -> float:
        return math.log(self.spot)

    def with_tau(self, tau: float) -> "ModelSpec":
        return replace(self, tau=tau)


@dataclass(frozen=True)
class GridSpec:
    """Simulation grid. ``steps=None`` picks :func:`default_steps` for the maturity.

    ``control_variate`` regresses each price on the mixing price of the
    constant-volatility model driven by the same ``W_T``, whose mean is known
    exactly.
    """

    paths: int
    seed: int
    steps: int | None = None
    antithetic: bool = True
    control_variate: bool = True

    def __post_init__(self):
        if self.steps is not None and self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps!r}")
        if self.paths < 2:
            raise ValueError(f"paths must be >= 2, got {self.paths!r}")
        if self.antithetic and self.paths % 2:
            raise ValueError(f"antithetic sampling needs an even path count, got {self.paths}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    def steps_for(self, tau: float) -> int:
        return self.steps if self.steps is not None else default_steps(tau)

    @property
    def samples(self) -> int:
        return self.paths // 2 if self.antithetic else self.paths


@dataclass(frozen=True)
class PathBundle:
    realized_vol: float
    int_var: float
    int_sigma_dW: float
    mart_factor: float


@dataclass(frozen=True)
class PathArrays:
    """Vectorised :class:`PathBundle` plus the endpoint quantities used by checks."""

    realized_vol: np.ndarray
    int_var: np.ndarray
    int_sigma_dW: np.ndarray
    mart_factor: np.ndarray
    w_T: np.ndarray
    var_T: np.ndarray


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    n: int
    heavy_tail: bool = False


def paths_from_increments(m: ModelSpec, dW: np.ndarray) -> PathArrays:
    """Path functionals from Brownian increments ``dW`` of shape ``(n, steps)`` on ``[0, tau]``."""
    n, steps = dW.shape
    h = m.tau / steps
    w = np.zeros((n, steps + 1))
    np.cumsum(dW, axis=1, out=w[:, 1:])
    t = h * np.arange(steps + 1)
    var = m.sigma0**2 * np.exp(m.alpha * w - 0.5 * m.alpha**2 * t)
    int_var = h * (var[:, 1:-1].sum(axis=1) + 0.5 * (var[:, 0] + var[:, -1]))
    int_sigma_dW = (np.sqrt(var[:, :-1]) * dW).sum(axis=1)
    mart = np.exp(-0.5 * m.rho**2 * int_var + m.rho * int_sigma_dW)
    return PathArrays(
        realized_vol=np.sqrt(int_var / m.tau),
        int_var=int_var,
        int_sigma_dW=int_sigma_dW,
        mart_factor=mart,
        w_T=w[:, -1],
        var_T=var[:, -1],
    )


def _increments(m: ModelSpec, g: GridSpec, samples: np.ndarray) -> np.ndarray:
    steps = g.steps_for(m.tau)
    return math.sqrt(m.tau / steps) * rng.normals(g.seed, samples, steps, rng.STREAM_W)


def simulate_paths(m: ModelSpec, g: GridSpec, sample_lo: int, sample_hi: int) -> list[PathArrays]:
    """Paths for samples ``[sample_lo, sample_hi)``: one :class:`PathArrays`, two if antithetic."""
    dW = _increments(m, g, np.arange(sample_lo, sample_hi))
    if g.antithetic:
        return [paths_from_increments(m, dW), paths_from_increments(m, -dW)]
    return [paths_from_increments(m, dW)]


def simulate_path(m: ModelSpec, g: GridSpec, path_index: int) -> PathBundle:
    if not 0 <= path_index < g.paths:
        raise IndexError(f"path_index {path_index} outside [0, {g.paths})")
    sample, flip = divmod(path_index, 2) if g.antithetic else (path_index, 0)
    dW = _increments(m, g, np.array([sample]))
    p = paths_from_increments(m, -dW if flip else dW)
    return PathBundle(
        realized_vol=float(p.realized_vol[0]),
        int_var=float(p.int_var[0]),
        int_sigma_dW=float(p.int_sigma_dW[0]),
        mart_factor=float(p.mart_factor[0]),
    )


def resolve_threads(threads: int | None) -> int:
    """Explicit ``threads`` wins; otherwise the environment variable, else 1."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def sample_matrix(
    m: ModelSpec,
    g: GridSpec,
    evaluate: Callable[[PathArrays], np.ndarray],
    threads: int | None = None,
) -> np.ndarray:
    """Per-sample values of ``evaluate`` (shape ``(samples, q)``), antithetic pairs averaged.

    Chunk boundaries are fixed by ``CHUNK_SAMPLES``, not by the thread count,
    and every row depends only on its own sample index.
    """
    bounds = [(lo, min(lo + CHUNK_SAMPLES, g.samples)) for lo in range(0, g.samples, CHUNK_SAMPLES)]

    def work(bound):
        outs = [np.asarray(evaluate(p), dtype=float) for p in simulate_paths(m, g, *bound)]
        outs = [o.reshape(o.shape[0], -1) for o in outs]
        return outs[0] if len(outs) == 1 else 0.5 * (outs[0] + outs[1])

    n_threads = resolve_threads(threads)
    if n_threads == 1 or len(bounds) == 1:
        chunks = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            chunks = list(pool.map(work, bounds))
    return np.concatenate(chunks, axis=0)


def heavy_tail(values: np.ndarray) -> bool:
    """True when one sample carries more than 1% of the total absolute mass.

    Samples that are all negligible (pure rounding residue) are never flagged.
    """
    mass = np.abs(values)
    peak = mass.max(initial=0.0)
    return bool(peak > NEGLIGIBLE and peak > HEAVY_TAIL_SHARE * mass.sum())


def estimate(values: np.ndarray, offset: float = 0.0) -> EstimateWithError:
    """Sample mean (plus a known ``offset``) and its standard error."""
    values = np.ascontiguousarray(values, dtype=float).ravel()
    n = values.size
    mean = float(np.sum(values) / n)
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    flagged = heavy_tail(values)
    if flagged:
        log.warning("heavy-tail warning: one sample exceeds %.0f%% of the total", 100 * HEAVY_TAIL_SHARE)
    return EstimateWithError(mean + offset, se, n, flagged)


# ---------------------------------------------------------------- evaluators


def call_prices(m: ModelSpec, strikes) -> Callable[[PathArrays], np.ndarray]:
    """Per-path mixing prices ``BS(S exp(M_T), K, rho_bar sigma_{t,T})``, one column per strike."""
    strikes = np.asarray(strikes, dtype=float).reshape(1, -1)
    rho_bar = m.rho_bar

    def evaluate(p: PathArrays) -> np.ndarray:
        return bs_price_array(
            m.spot * p.mart_factor[:, None], strikes, rho_bar * p.realized_vol[:, None], m.tau
        )

    return evaluate


def call_price_controls(m: ModelSpec, strikes) -> Callable[[PathArrays], np.ndarray]:
    """Mixing prices of the constant-vol model driven by the same ``W_T``.

    Their mean is the Black-Scholes price at ``sigma0`` (see :func:`control_offsets`).
    """
    strikes = np.asarray(strikes, dtype=float).reshape(1, -1)
    s0 = m.sigma0

    def evaluate(p: PathArrays) -> np.ndarray:
        spot = m.spot * np.exp(m.rho * s0 * p.w_T - 0.5 * (m.rho * s0) ** 2 * m.tau)
        return bs_price_array(spot[:, None], strikes, m.rho_bar * s0, m.tau)

    return evaluate


def control_offsets(m: ModelSpec, strikes) -> np.ndarray:
    """Exact means of the price controls."""
    return np.array([bs_price(BSInputs(m.spot, float(k), m.sigma0, m.tau)) for k in strikes])


def control_coefficient(values: np.ndarray, controls: np.ndarray) -> float:
    c = controls - controls.mean()
    var = float(c @ c)
    if var <= 0:
        return 0.0
    return float((values - values.mean()) @ c) / var


def controlled_estimate(
    values: np.ndarray, controls: np.ndarray, control_mean: float, beta: float | None = None
) -> EstimateWithError:
    """Control-variate estimate ``mean(v) - beta (mean(c) - E[c])``.

    ``beta`` defaults to the regression coefficient of ``v`` on ``c``.
    """
    if beta is None:
        beta = control_coefficient(values, controls)
    return estimate(values - beta * controls, beta * control_mean)


def swap_quantities(p: PathArrays) -> np.ndarray:
    """Columns: realized vol, share-weighted realized vol, covariance integrand, ``sigma_{t,T} int sigma dW``."""
    rv = p.realized_vol
    return np.column_stack(
        [rv, p.mart_factor * rv, (p.mart_factor - 1.0) * rv, rv * p.int_sigma_dW]
    )


SWAP_COLUMNS = ("vol_swap", "dual_vol_swap", "return_vol_covariance", "sigma_dW_expectation")


# ---------------------------------------------------------------- estimators


def price_matrix(m: ModelSpec, strikes, control_variate: bool) -> Callable[[PathArrays], np.ndarray]:
    """Price columns for ``strikes``, followed by their control columns when enabled."""
    prices = call_prices(m, strikes)
    if not control_variate:
        return prices
    controls = call_price_controls(m, strikes)
    return lambda p: np.concatenate([prices(p), controls(p)], axis=1)


def price_estimates(m: ModelSpec, strikes, values: np.ndarray, control_variate: bool) -> list[EstimateWithError]:
    """Estimates from the leading columns of ``values`` laid out by :func:`price_matrix`."""
    n = len(strikes)
    if not control_variate:
        return [estimate(values[:, j]) for j in range(n)]
    offsets = control_offsets(m, strikes)
    return [controlled_estimate(values[:, j], values[:, n + j], offsets[j]) for j in range(n)]


def conditional_call_price(
    m: ModelSpec, g: GridSpec, strike: float, threads: int | None = None
) -> EstimateWithError:
    """Mixing estimator of ``E[(S_T - K)+]``; exact in distribution given the W-path."""
    if not strike > 0:
        raise ValueError(f"strike must be positive, got {strike!r}")
    values = sample_matrix(m, g, price_matrix(m, [strike], g.control_variate), threads)
    return price_estimates(m, [strike], values, g.control_variate)[0]


def _swap_column(m, g, column, threads):
    return estimate(sample_matrix(m, g, lambda p: swap_quantities(p)[:, column], threads))


def vol_swap(m: ModelSpec, g: GridSpec, threads: int | None = None) -> EstimateWithError:
    """``E[sigma_{t,T}]``."""
    return _swap_column(m, g, 0, threads)


def dual_vol_swap(m: ModelSpec, g: GridSpec, threads: int | None = None) -> EstimateWithError:
    """``E[exp(x_T - x_t) sigma_{t,T}]``, computed as ``E[exp(M_T) sigma_{t,T}]``."""
    return _swap_column(m, g, 1, threads)


def return_vol_covariance(m: ModelSpec, g: GridSpec, threads: int | None = None) -> EstimateWithError:
    """``E[(exp(x_T - x_t) - 1) sigma_{t,T}]`` with both factors taken from the same path."""
    return _swap_column(m, g, 2, threads)


def sigma_dW_expectation(m: ModelSpec, g: GridSpec, threads: int | None = None) -> EstimateWithError:
    """``E[sigma_{t,T} int_t^T sigma_u dW_u]``."""
    return _swap_column(m, g, 3, threads)


def swap_estimates(m: ModelSpec, g: GridSpec, threads: int | None = None) -> dict[str, EstimateWithError]:
    """All four swap-type estimates from a single pass over the paths."""
    values = sample_matrix(m, g, swap_quantities, threads)
    return {name: estimate(values[:, j]) for j, name in enumerate(SWAP_COLUMNS)}


# ---------------------------------------------------------------- brute force


def brute_force_call_price(
    m: ModelSpec,
    strike: float,
    paths: int,
    seed: int,
    steps: int | None = None,
    chunk: int = 50_000,
) -> EstimateWithError:
    """Plain two-factor log-Euler simulation of the spot with explicit idiosyncratic shocks.

    Independent of the mixing estimator: separate generator (PCG64), no
    conditioning, no antithetics, no control variate.
    """
    steps = steps or default_steps(m.tau)
    h = m.tau / steps
    sqrt_h = math.sqrt(h)
    gen = np.random.Generator(np.random.PCG64(seed))
    t = h * np.arange(steps)
    payoffs = []
    for lo in range(0, paths, chunk):
        n = min(chunk, paths - lo)
        dW = sqrt_h * gen.standard_normal((n, steps))
        dZ = sqrt_h * gen.standard_normal((n, steps))
        w_left = np.cumsum(dW, axis=1) - dW
        var = m.sigma0**2 * np.exp(m.alpha * w_left - 0.5 * m.alpha**2 * t)
        sig = np.sqrt(var)
        x_T = m.x + (-0.5 * var * h + sig * (m.rho * dW + m.rho_bar * dZ)).sum(axis=1)
        payoffs.append(np.maximum(np.exp(x_T) - strike, 0.0))
    return estimate(np.concatenate(payoffs))
