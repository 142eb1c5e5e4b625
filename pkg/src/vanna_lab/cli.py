"""Batch experiment runner.

Usage::

    vanna-lab run <config-path> [--output PATH] [--format csv|json] [--threads N]

Exit status: 0 when every checked quantity passes (heavy-tail warnings
allowed), 1 on a failed check or numerical failure, 2 on a config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import lognormal_oracle
from .bs_core import BSInputs, bs_price, zero_vanna_strike_flat
from .smile_lab import (
    ExtrapolationRefused,
    SmileError,
    atm_skew,
    build_smile,
    convergence_order,
    default_strikes,
    limit_experiment,
    run_rung,
    swap_report,
    zero_vanna_solve,
)
from .sv_engine import GridSpec, ModelSpec, resolve_threads, swap_estimates, conditional_call_price

EXPERIMENTS = ("price", "smile", "swaps", "approx_check", "limit_ladder")
FORMATS = ("csv", "json")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2

# tolerances applied by the report checks
LIMIT_REL_TOL = 0.05
GAP_ORDER_MIN = 0.8
SIGMA_DW_REL_TOL = 0.02
SIGMA_DW_MAX_TAU = 1 / 52
SWAP_GAP_ABS_TOL = 1e-4
ZV_SWAP_REL_TOL = 0.10
EXACT_ABS_TOL = 1e-10

KNOWN_KEYS = {
    "experiment", "spot", "sigma0", "alpha", "rho", "tau", "paths", "seed", "steps",
    "antithetic", "control_variate", "taus", "strikes", "output_path", "output_format",
}

LONG_COLUMNS = [
    "quantity", "tau", "strike", "value", "std_error", "reference", "tolerance", "status", "warning",
]

LADDER_COLUMNS = [
    "row_type", "tau", "steps",
    "q_skew", "q_skew_se", "q_cov", "q_cov_se", "q_zv", "q_zv_se",
    "vol_swap", "i_minus", "gap_minus", "gap_minus_se",
    "dual_vol_swap", "i_plus", "gap_plus", "gap_plus_se",
    "reference_slope", "gap_order_minus", "gap_order_minus_se", "gap_order_plus", "gap_order_plus_se",
    "status", "warning",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    grid: GridSpec
    experiment: str
    output_path: str
    output_format: str = "csv"
    taus: list[float] | None = None
    strikes: list[float] | None = None
    raw: dict[str, str] = field(default_factory=dict, compare=False)


def _number(text: str) -> float:
    # fractions such as 1/252 are accepted
    return float(Fraction(text.strip()))


def _number_list(text: str) -> list[float]:
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    return [_number(t) for t in items]


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, output: str | None = None, fmt: str | None = None) -> ExperimentConfig:
    """Parse a flat ``key = value`` config; ``#`` starts a comment line."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), delimiters=("=",))
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    raw = dict(parser["config"])
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")

    def need(key):
        if key not in raw or not raw[key].strip():
            raise ConfigError(f"missing required key {key!r}")
        return raw[key]

    try:
        experiment = need("experiment").strip()
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {experiment!r}")
        taus = _number_list(raw["taus"]) if "taus" in raw else None
        if experiment == "limit_ladder":
            if not taus:
                raise ConfigError("limit_ladder needs a non-empty 'taus' list")
        elif "tau" not in raw:
            raise ConfigError("missing required key 'tau'")
        tau = _number(raw["tau"]) if "tau" in raw else taus[0]
        model = ModelSpec(
            spot=_number(need("spot")),
            sigma0=_number(need("sigma0")),
            alpha=_number(need("alpha")),
            rho=_number(need("rho")),
            tau=tau,
        )
        seed_text = need("seed").strip()
        if not seed_text.isdigit():
            raise ConfigError(f"seed must be a nonnegative integer, got {seed_text!r}")
        paths_text = need("paths").strip()
        if not paths_text.isdigit():
            raise ConfigError(f"paths must be a positive integer, got {paths_text!r}")
        steps_text = raw.get("steps", "").strip()
        grid = GridSpec(
            paths=int(paths_text),
            seed=int(seed_text),
            steps=int(steps_text) if steps_text else None,
            antithetic=_bool(raw.get("antithetic", "true")),
            control_variate=_bool(raw.get("control_variate", "true")),
        )
        strikes = _number_list(raw["strikes"]) if raw.get("strikes", "").strip() else None
        if strikes is not None and any(not k > 0 for k in strikes):
            raise ConfigError("strikes must be positive")
        if taus is not None and any(not t > 0 for t in taus):
            raise ConfigError("taus must be positive")
    except ConfigError:
        raise
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc

    output_path = output or raw.get("output_path", "").strip()
    if not output_path:
        raise ConfigError("no output path: set 'output_path' or pass --output")
    output_format = (fmt or raw.get("output_format", "csv")).strip()
    if output_format not in FORMATS:
        raise ConfigError(f"output_format must be csv or json, got {output_format!r}")
    out_dir = Path(output_path).resolve().parent
    if not out_dir.is_dir() or not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output directory {str(out_dir)!r} is not writable")
    return ExperimentConfig(model, grid, experiment, output_path, output_format, taus, strikes, raw)


def load_config(path: str, output: str | None = None, fmt: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text, output, fmt)


# ------------------------------------------------------------------ reports


@dataclass
class Report:
    config: dict[str, str]
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    plot_rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.get("status") != "fail" for r in self.rows)

    @property
    def warned(self) -> bool:
        return any(r.get("warning") for r in self.rows)


def _check(value, reference, tolerance) -> str:
    if reference is None or tolerance is None:
        return "info"
    return "pass" if abs(value - reference) <= tolerance else "fail"


def _row(quantity, tau, value, std_error=None, reference=None, tolerance=None, strike=None, warning=False):
    return {
        "quantity": quantity,
        "tau": tau,
        "strike": strike,
        "value": value,
        "std_error": std_error,
        "reference": reference,
        "tolerance": tolerance,
        "status": _check(value, reference, tolerance),
        "warning": "heavy_tail" if warning else "",
    }


def _exact_tol(se: float) -> float:
    return max(3.0 * se, EXACT_ABS_TOL)


def _config_echo(cfg: ExperimentConfig) -> dict[str, str]:
    m, g = cfg.model, cfg.grid
    echo = {
        "experiment": cfg.experiment,
        "spot": m.spot,
        "sigma0": m.sigma0,
        "alpha": m.alpha,
        "rho": m.rho,
        "tau": m.tau,
        "paths": g.paths,
        "seed": g.seed,
        "steps": "default" if g.steps is None else g.steps,
        "antithetic": g.antithetic,
        "control_variate": g.control_variate,
    }
    if cfg.taus is not None:
        echo["taus"] = ",".join(_fmt(t) for t in cfg.taus)
    if cfg.strikes is not None:
        echo["strikes"] = ",".join(_fmt(k) for k in cfg.strikes)
    return {k: _fmt(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else str(v)
            for k, v in echo.items()}


def _run_price(cfg, threads):
    m, g = cfg.model, cfg.grid
    strikes = cfg.strikes or [m.spot]
    rows = []
    for strike in strikes:
        est = conditional_call_price(m, g, strike, threads)
        if m.alpha == 0:
            ref, tol = bs_price(BSInputs(m.spot, strike, m.sigma0, m.tau)), _exact_tol(est.std_error)
        else:
            ref, tol = None, None
        row = _row("call_price", m.tau, est.value, est.std_error, ref, tol, strike, est.heavy_tail)
        if not max(m.spot - strike, 0.0) <= est.value < m.spot:
            row["status"] = "fail"
        rows.append(row)
    return rows, []


def _run_smile(cfg, threads):
    m, g = cfg.model, cfg.grid
    strikes = cfg.strikes or default_strikes(m)
    smile = build_smile(m, g, strikes, threads)
    flat = m.alpha == 0
    rows, plot = [], []
    for strike, p in zip(sorted(strikes), smile.points):
        rows.append(_row("iv", m.tau, p.iv, p.iv_std_error, m.sigma0 if flat else None,
                         max(3 * p.iv_std_error, 1e-8) if flat else None, strike))
        plot.append({"tau": m.tau, "quantity": "iv", "log_strike": p.k, "value": p.iv, "std_error": p.iv_std_error})
    skew = atm_skew(smile, m.sigma0 * math.sqrt(m.tau))
    zv = zero_vanna_solve(smile)
    skew_tol = max(3 * skew.slope_std_error, EXACT_ABS_TOL)
    # smile-point noise bounds the interpolated vols; k = x -+ i^2 tau / 2 moves by i tau di
    iv_tol = max(3 * float(smile.iv_std_error.max()), 1e-8)
    k_tol = max(m.sigma0 * m.tau * iv_tol, 1e-8)
    rows.append(_row("atm_iv", m.tau, skew.i0, None, m.sigma0 if flat else None, iv_tol if flat else None))
    rows.append(_row("atm_slope", m.tau, skew.slope, skew.slope_std_error,
                     0.0 if flat else None, skew_tol if flat else None))
    rows.append(_row("slope_limit", 0.0, lognormal_oracle.slope_limit(m.rho, m.alpha)))
    for name, value, ref, tol in (
        ("k_minus", zv.k_minus, zero_vanna_strike_flat(m.x, m.sigma0, m.tau, "-"), k_tol),
        ("i_minus", zv.i_minus, m.sigma0, iv_tol),
        ("k_plus", zv.k_plus, zero_vanna_strike_flat(m.x, m.sigma0, m.tau, "+"), k_tol),
        ("i_plus", zv.i_plus, m.sigma0, iv_tol),
    ):
        rows.append(_row(name, m.tau, value, None, ref if flat else None, tol if flat else None))
    return rows, plot


def _run_swaps(cfg, threads):
    m, g = cfg.model, cfg.grid
    est = swap_estimates(m, g, threads)
    flat = m.alpha == 0
    refs = {
        "vol_swap": m.sigma0 if flat else None,
        "dual_vol_swap": m.sigma0 if flat else None,
        "return_vol_covariance": 0.0 if (flat or m.rho == 0) else None,
    }
    rows = []
    for name in ("vol_swap", "dual_vol_swap", "return_vol_covariance"):
        e = est[name]
        ref = refs[name]
        rows.append(_row(name, m.tau, e.value, e.std_error, ref,
                         _exact_tol(e.std_error) if ref is not None else None, warning=e.heavy_tail))
    e = est["sigma_dW_expectation"]
    ref = lognormal_oracle.sigma_dW_small_tau(m.sigma0, m.alpha, m.tau)
    checked = flat or m.tau <= SIGMA_DW_MAX_TAU
    tol = max(3 * e.std_error, SIGMA_DW_REL_TOL * abs(ref), 0.0 if not flat else EXACT_ABS_TOL)
    rows.append(_row("sigma_dW_expectation", m.tau, e.value, e.std_error, ref,
                     tol if checked else None, warning=e.heavy_tail))
    norm = m.sigma0**2 * m.tau
    cov = est["return_vol_covariance"]
    rows.append(_row("q_cov", m.tau, cov.value / norm, cov.std_error / norm,
                     lognormal_oracle.slope_limit(m.rho, m.alpha), None, warning=cov.heavy_tail))
    return rows, []


def _run_approx(cfg, threads):
    m, g = cfg.model, cfg.grid
    rep = swap_report(m, run_rung(m, g, cfg.strikes, threads=threads))
    flat = m.alpha == 0
    short = m.tau <= SIGMA_DW_MAX_TAU
    rows = []
    for name, e in (("vol_swap_minus_i_minus", rep.vol_swap_minus_i_minus),
                    ("dual_vol_swap_minus_i_plus", rep.dual_vol_swap_minus_i_plus)):
        if flat:
            tol = _exact_tol(e.std_error)
        elif short:
            tol = SWAP_GAP_ABS_TOL
        else:
            tol = None
        rows.append(_row(name, m.tau, e.value, e.std_error, 0.0, tol, warning=rep.heavy_tail))
    zv, rsd = rep.zv_diff, rep.rho_sigma_dW
    combined = math.hypot(zv.std_error, rsd.std_error)
    tol = max(3 * combined, ZV_SWAP_REL_TOL * abs(rsd.value), EXACT_ABS_TOL)
    rows.append(_row("i_plus_minus_i_minus", m.tau, zv.value, zv.std_error, rsd.value,
                     tol if (flat or short) else None, warning=rep.heavy_tail))
    rows.append(_row("rho_sigma_dW_expectation", m.tau, rsd.value, rsd.std_error, warning=rsd.heavy_tail))
    return rows, []


def _run_ladder(cfg, threads):
    m, g = cfg.model, cfg.grid
    strikes = None
    if cfg.strikes is not None:
        strikes = [cfg.strikes] * len(cfg.taus)
    rep = limit_experiment(m, g, cfg.taus, strikes, threads)
    order_minus, order_minus_se = convergence_order(rep.taus, [r.gap_minus for r in rep.rungs])
    order_plus, order_plus_se = convergence_order(rep.taus, [r.gap_plus for r in rep.rungs])
    ref = rep.reference_slope
    rows, plot = [], []
    for i, r in enumerate(rep.rungs):
        row = {
            "row_type": "rung",
            "tau": r.tau,
            "steps": g.steps_for(r.tau),
            "q_skew": rep.q_skew[i].value, "q_skew_se": rep.q_skew[i].std_error,
            "q_cov": rep.q_cov[i].value, "q_cov_se": rep.q_cov[i].std_error,
            "q_zv": rep.q_zv[i].value, "q_zv_se": rep.q_zv[i].std_error,
            "vol_swap": r.swaps["vol_swap"].value, "i_minus": r.zero_vanna.i_minus,
            "gap_minus": r.gap_minus.value, "gap_minus_se": r.gap_minus.std_error,
            "dual_vol_swap": r.swaps["dual_vol_swap"].value, "i_plus": r.zero_vanna.i_plus,
            "gap_plus": r.gap_plus.value, "gap_plus_se": r.gap_plus.std_error,
            "reference_slope": ref,
            "status": "info",
            "warning": "heavy_tail" if r.heavy_tail else "",
        }
        rows.append(row)
        for q in ("q_skew", "q_cov", "q_zv", "gap_minus", "gap_plus"):
            plot.append({"tau": r.tau, "quantity": q, "value": row[q], "std_error": row[q + "_se"]})

    ok = True
    extrap = {}
    for name, e in zip(("q_skew", "q_cov", "q_zv"), rep.extrapolated):
        extrap[name], extrap[name + "_se"] = e.value, e.std_error
        tol = max(3 * e.std_error, LIMIT_REL_TOL * abs(ref))
        if ref == 0:
            tol = max(3 * e.std_error, EXACT_ABS_TOL)
        ok &= abs(e.value - ref) <= tol
        plot.append({"tau": 0.0, "quantity": name, "value": e.value, "std_error": e.std_error})
    if m.alpha > 0 and m.rho != 0:
        ok &= bool(order_minus >= GAP_ORDER_MIN and order_plus >= GAP_ORDER_MIN)
    rows.append({
        "row_type": "extrapolated", "tau": 0.0, "steps": None,
        **extrap,
        "vol_swap": None, "i_minus": None, "gap_minus": None, "gap_minus_se": None,
        "dual_vol_swap": None, "i_plus": None, "gap_plus": None, "gap_plus_se": None,
        "reference_slope": ref,
        "gap_order_minus": order_minus, "gap_order_minus_se": order_minus_se,
        "gap_order_plus": order_plus, "gap_order_plus_se": order_plus_se,
        "status": "pass" if ok else "fail",
        "warning": "heavy_tail" if any(r.heavy_tail for r in rep.rungs) else "",
    })
    return rows, plot


RUNNERS = {
    "price": _run_price,
    "smile": _run_smile,
    "swaps": _run_swaps,
    "approx_check": _run_approx,
    "limit_ladder": _run_ladder,
}


def build_report(cfg: ExperimentConfig, threads: int | None = None) -> Report:
    rows, plot = RUNNERS[cfg.experiment](cfg, threads)
    columns = LADDER_COLUMNS if cfg.experiment == "limit_ladder" else LONG_COLUMNS
    return Report(_config_echo(cfg), columns, rows, plot)


# ------------------------------------------------------------------ output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
        return format(value, ".10g")
    return str(value)


def _json_value(value):
    if isinstance(value, float):
        return float(format(value, ".10g")) if math.isfinite(value) else None
    return value


def render_csv(columns: list[str], rows: list[dict], header: dict[str, str] | None = None) -> str:
    lines = [f"# {k}={v}" for k, v in (header or {}).items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def render_json(report: Report) -> str:
    doc = {
        "config": report.config,
        "columns": report.columns,
        "rows": [{c: _json_value(row.get(c)) for c in report.columns} for row in report.rows],
        "status": "pass" if report.passed else "fail",
        "warning": report.warned,
    }
    return json.dumps(doc, indent=2) + "\n"


PLOT_COLUMNS = ["tau", "quantity", "log_strike", "value", "std_error"]


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def plot_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".plot.csv")


def emit_report(report: Report, path: str | Path, fmt: str) -> list[Path]:
    """Write the report (and plot data, when there is any); returns the paths written."""
    path = Path(path)
    text = render_csv(report.columns, report.rows, report.config) if fmt == "csv" else render_json(report)
    written = []
    try:
        _atomic_write(path, text)
        written.append(path)
        if report.plot_rows:
            extra = plot_path(path)
            _atomic_write(extra, render_csv(PLOT_COLUMNS, report.plot_rows))
            written.append(extra)
    except OSError as exc:
        raise OSError(f"cannot write report to {str(path)!r}: {exc}") from exc
    return written


def run(cfg: ExperimentConfig, threads: int | None = None) -> int:
    try:
        report = build_report(cfg, threads)
    except (SmileError, ExtrapolationRefused, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    emit_report(report, cfg.output_path, cfg.output_format)
    if report.warned:
        print("warning: heavy-tail flag raised on at least one estimate", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="vanna-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output")
    p_run.add_argument("--format", choices=FORMATS)
    p_run.add_argument("--threads", type=int)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.output, args.format)
        threads = resolve_threads(args.threads)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg, threads)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
