"""Short-maturity ATM skew, volatility swaps and zero-vanna implied vols under lognormal variance."""

from .bs_core import BSInputs, LogCoords, bs_price, bs_vega, d_plus_minus, implied_vol, zero_vanna_strike_flat
from .sv_engine import (
    EstimateWithError,
    GridSpec,
    ModelSpec,
    PathBundle,
    conditional_call_price,
    dual_vol_swap,
    return_vol_covariance,
    sigma_dW_expectation,
    simulate_path,
    vol_swap,
)
from .smile_lab import (
    LimitReport,
    Smile,
    SkewEstimate,
    ZeroVannaPair,
    atm_skew,
    build_smile,
    check_swap_approximations,
    limit_experiment,
    zero_vanna_solve,
)

__version__ = "0.1.0"
