"""Command-line interface.

Exit codes: 0 success, 2 input or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__
from .cycles import HubRule, PhaseCalendar, classify_hubs, flatten_columns, phase_averages
from .forecast import (
    DEFAULT_HORIZONS,
    THRESHOLDS,
    CollinearDesign,
    MacroSeries,
    gdp_growth,
    gdp_volatility,
    horizon_suite,
    macro_from_frame,
    monthly_aggregate,
    quarterly_aggregate,
    results_json,
    results_table,
    threshold_decompose,
)
from .industry_panel import build_panel
from .io import (
    InputError,
    atomic_write_text,
    read_caps,
    read_chains,
    read_connectedness,
    read_firm_vix,
    read_macro,
    read_membership,
    read_table,
    parse_date,
    parse_float,
    write_frame,
)
from .network import NODE_STATS, ZeroDenominator, ZeroRow, connectedness, rolling_window_baseline
from .options_iv import NegativeVariance, VixConfig
from .pipeline import CONFIG_ENV, NUMERICAL_ERRORS, Pipeline, StageError, adjacency_long, compute_firm_vix, load_config, run_network
from .simulate import REGIMES, RegimeSpec, simulate_chain_frame, simulate_regime
from .tvp_var import LocalEstimator, TvpVarSpec, draws_to_frame, minnesota_prior

log = logging.getLogger("uncnet")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
NUMERICAL = NUMERICAL_ERRORS + (ZeroDenominator, ZeroRow, NegativeVariance, CollinearDesign)


class CliError(InputError):
    pass


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in _csv_list(text)]


def _read_values(path) -> tuple[pd.DatetimeIndex, list[str], np.ndarray]:
    """Wide ``date, <series>...`` table without the positivity check of an industry panel."""
    frame, _ = read_table(path, {"date": parse_date}, extra=parse_float, strict=True)
    dates = pd.DatetimeIndex(frame.pop("date"))
    if len(frame.columns) == 0:
        raise CliError(f"{path}: no series columns")
    return dates, [str(c) for c in frame.columns], frame.to_numpy(float)


def _add_tvp_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimation")
    d = TvpVarSpec()
    g.add_argument("--lags", type=int, default=d.lags)
    g.add_argument("--bandwidth", type=float, default=None, help="kernel bandwidth in periods (default sqrt(T))")
    g.add_argument("--shrinkage", type=float, default=d.shrinkage)
    g.add_argument("--own-lag-mean", type=float, default=d.own_lag_mean)
    g.add_argument("--n-draws", type=int, default=d.n_draws)
    g.add_argument("--stability-cap", type=float, default=d.stability_cap)
    g.add_argument("--weight-norm", choices=("ess", "sample"), default=d.weight_norm)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--stride", type=int, default=1, help="estimate every k-th date")
    g.add_argument("--workers", type=int, default=1)


def _spec(args) -> TvpVarSpec:
    return TvpVarSpec(
        lags=args.lags,
        bandwidth=args.bandwidth,
        shrinkage=args.shrinkage,
        own_lag_mean=args.own_lag_mean,
        n_draws=args.n_draws,
        stability_cap=args.stability_cap,
        seed=args.seed,
        weight_norm=args.weight_norm,
    )


def cmd_vix(args) -> int:
    chains, issues = read_chains(args.chains, args.strict)
    frame, failures = compute_firm_vix(chains, VixConfig(zero_bid_stop=args.zero_bid_stop, target_days=args.target_days))
    for f in failures:
        log.warning("%s", f)
    if frame.empty:
        print("uncnet: numerical failure: no firm-date produced a VIX", file=sys.stderr)
        return EXIT_NUMERICAL
    write_frame(args.out, frame, index=False)
    log.info("wrote %d firm-dates (%d malformed rows, %d failed chains)", len(frame), len(issues), len(failures))
    return EXIT_OK


def cmd_panel(args) -> int:
    vix, _ = read_firm_vix(args.firm_vix, args.strict)
    caps, _ = read_caps(args.caps, args.strict)
    members, _ = read_membership(args.membership, args.strict)
    panel = build_panel(vix, caps, members, fill_limit=args.fill_limit, gap_policy=args.gap_policy)
    write_frame(args.out, panel.to_frame())
    log.info("wrote panel %d x %d", panel.T, panel.N)
    return EXIT_OK


def _pick_indices(dates: pd.DatetimeIndex, spec: TvpVarSpec, args) -> list[int]:
    if getattr(args, "dates", None):
        wanted = pd.DatetimeIndex(_csv_list(args.dates))
        missing = wanted.difference(dates)
        if len(missing):
            raise CliError(f"dates not in panel: {[str(d.date()) for d in missing]}")
        idx = [int(dates.get_loc(d)) for d in wanted]
        early = [str(dates[k].date()) for k in idx if k < spec.lags]
        if early:
            raise CliError(f"dates {early} precede the first {spec.lags} lags")
        return sorted(idx)
    return list(range(spec.lags, len(dates), args.stride))


def cmd_estimate(args) -> int:
    dates, labels, values = _read_values(args.panel)
    spec = _spec(args)
    est = LocalEstimator(values, spec, minnesota_prior(values, spec))
    out = Path(args.out)
    for k in _pick_indices(dates, spec, args):
        draws = est.draws(k)
        write_frame(out / f"draws_{dates[k].date()}.csv", draws_to_frame(draws, labels), index=False)
        if draws.rejection_rate > 0.5:
            log.warning("%s: %.0f%% of draws rejected as unstable", dates[k].date(), 100 * draws.rejection_rate)
    return EXIT_OK


def cmd_network(args) -> int:
    dates, labels, values = _read_values(args.panel)
    if args.method == "rolling":
        window = args.window or 10 * len(labels) * args.lags
        series = rolling_window_baseline(values, window, args.horizon, args.lags, labels, dates)
        warnings = []
    else:
        series, warnings = run_network(values, labels, dates, _spec(args), args.horizon, args.stride, args.workers)
    for w in warnings:
        log.warning("%s", w)
    write_frame(args.out, series.to_frame())
    if args.adjacency:
        write_frame(args.adjacency, adjacency_long(series), index=False)
    return EXIT_OK


def cmd_classify(args) -> int:
    series = read_connectedness(args.connectedness)
    calendar = PhaseCalendar.from_csv(args.calendar) if args.calendar else PhaseCalendar.default()
    table = phase_averages(series, calendar, skip_empty=True, share=args.share)
    rule = HubRule.strict() if args.preset == "strict" else HubRule(args.top_k, args.bottom_k)
    cls = classify_hubs(table[("total", "AGG")], rule)
    out = Path(args.out)
    write_frame(out / "phase_table.csv", flatten_columns(table))
    atomic_write_text(out / "classification.json", cls.to_json() + "\n")
    log.info("hubs %s, non-hubs %s", sorted(cls.hubs), sorted(cls.non_hubs))
    return EXIT_OK


def _target(macro: dict[str, MacroSeries], args) -> MacroSeries:
    if args.target not in macro:
        raise CliError(f"target {args.target} not in macro file")
    y = macro[args.target]
    if args.target_kind == "gdp_growth":
        return gdp_growth(y)
    if args.target_kind == "gdp_volatility":
        return gdp_volatility(gdp_growth(y))
    return y


def cmd_predict(args) -> int:
    frame, _ = read_macro(args.macro, args.strict)
    controls = [(c.split(":") + ["level"])[:2] for c in _csv_list(args.controls or "")]
    macro = macro_from_frame(frame, dict(controls))
    missing = [c for c, _ in controls if c not in macro]
    if missing:
        raise CliError(f"controls {missing} not in macro file")
    y = _target(macro, args)
    agg = quarterly_aggregate if y.frequency == "quarterly" else monthly_aggregate
    cs = []
    for path, name in ((args.connectedness, "C"), (args.hubs, "C_hubs"), (args.non_hubs, "C_non_hubs")):
        if path:
            cs.append(agg(read_connectedness(path).total_stat(), name))
    if not cs:
        raise CliError("give --connectedness and/or --hubs/--non-hubs")
    targets = [y]
    tau = args.threshold if args.threshold is not None else THRESHOLDS.get(args.target) if args.target_kind == "level" else None
    if tau is not None and not args.no_threshold:
        targets += list(threshold_decompose(y, tau))
    out = Path(args.out)
    payload = {}
    for t in targets:
        suite = horizon_suite(t, cs + [macro[c] for c, _ in controls], _int_list(args.horizons), hac=True)
        write_frame(out / f"regression_{t.id}.csv", results_table(suite, hac=args.hac).rename_axis("term"))
        payload[t.id] = json.loads(results_json(suite, hac=args.hac))
    atomic_write_text(out / "regressions.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _demo_config() -> Path:
    return Path(str(resources.files("uncnet").joinpath("data/demo/demo.ini")))


def cmd_pipeline(args) -> int:
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    if args.out:
        overrides["run.out"] = args.out
    if args.workers is not None:
        overrides["run.workers"] = str(args.workers)
    if args.strict:
        overrides["run.strict"] = "yes"
    path = _demo_config() if args.demo else args.config or os.environ.get(CONFIG_ENV)
    if path is None:
        raise CliError(f"no config: pass --config, --demo or set {CONFIG_ENV}")
    cfg = load_config(path, overrides)
    try:
        manifest = Pipeline(cfg).run()
    except StageError as exc:
        log.error("%s (partial manifest in %s)", exc, cfg.out)
        raise exc.cause from None
    log.info("pipeline finished: %d outputs in %s", len(manifest.outputs), cfg.out)
    return EXIT_OK


def cmd_demo_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = resources.files("uncnet").joinpath("data/demo")
    for item in sorted(src.iterdir(), key=lambda p: p.name):
        if item.name.endswith((".csv", ".ini")):
            shutil.copyfile(str(item), out / item.name)
    log.info("demo inputs copied to %s; run: uncnet pipeline --config %s", out, out / "demo.ini")
    return EXIT_OK


def cmd_simulate_var(args) -> int:
    spec = RegimeSpec(args.regime, args.n, args.own, args.cross_low, args.cross_high, args.level, args.vol, args.corr)
    values = simulate_regime(spec, args.T, args.seed)
    labels = [f"V{i + 1}" for i in range(args.n)]
    dates = pd.bdate_range(args.start, periods=args.T)
    out = Path(args.out)
    write_frame(out / "panel.csv", pd.DataFrame(values, index=dates.rename("date"), columns=labels))
    write_frame(out / "truth.csv", truth_frame(spec, args.T, dates, labels, args.horizon, args.ref_points), index=False)
    return EXIT_OK


def truth_frame(spec: RegimeSpec, T: int, dates, labels, H: int, n_ref: int) -> pd.DataFrame:
    """Coefficients, covariance and implied connectedness at evenly spaced reference dates."""
    rows = []
    for k in np.linspace(0, T - 1, n_ref).round().astype(int):
        u = k / T
        phi, sigma = spec.phi(u), spec.sigma(u)
        stats = connectedness(phi, sigma, H)
        row = {"date": dates[k].strftime("%Y-%m-%d"), "u": u, "C": float(stats.total)}
        for name in NODE_STATS:
            for j, lab in enumerate(labels):
                row[f"{name.upper()}_{lab}"] = float(stats.node(name)[j])
        for l in range(phi.shape[0]):
            for i, a in enumerate(labels):
                for j, b in enumerate(labels):
                    row[f"phi{l + 1}.{a}.{b}"] = float(phi[l, i, j])
        for i, a in enumerate(labels):
            for j in range(i, len(labels)):
                row[f"sigma.{a}.{labels[j]}"] = float(sigma[i, j])
        rows.append(row)
    return pd.DataFrame(rows)


def cmd_simulate_chains(args) -> int:
    firms = _csv_list(args.firms)
    days = [d.date() for d in pd.bdate_range(args.start, periods=args.days)]
    frame = simulate_chain_frame(
        firms,
        days,
        vol=args.vol,
        spot0=args.spot,
        rate=args.rate,
        expiry_days=_int_list(args.expiry_days),
        strike_step=args.strike_step,
        n_sd=args.n_sd,
        spread=args.spread,
        zero_bid_below=args.zero_bid_below,
        seed=args.seed,
    )
    write_frame(args.out, frame, index=False)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uncnet", description="Industry uncertainty networks from option-implied volatility.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("vix", help="firm VIX from option chains")
    s.add_argument("chains")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--strict", action="store_true", help="fail on the first malformed row")
    s.add_argument("--target-days", type=int, default=30)
    s.add_argument("--zero-bid-stop", type=int, default=2)
    s.set_defaults(func=cmd_vix)

    s = sub.add_parser("panel", help="cap-weighted industry panel")
    s.add_argument("--firm-vix", required=True)
    s.add_argument("--caps", required=True)
    s.add_argument("--membership", required=True)
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--fill-limit", type=int, default=5)
    s.add_argument("--gap-policy", choices=("raise", "drop"), default="raise")
    s.add_argument("--strict", action="store_true")
    s.set_defaults(func=cmd_panel)

    s = sub.add_parser("estimate", help="posterior draws at selected dates")
    s.add_argument("panel")
    s.add_argument("-o", "--out", required=True, help="output directory")
    s.add_argument("--dates", help="comma-separated dates (default: every stride-th date)")
    _add_tvp_args(s)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("network", help="connectedness series")
    s.add_argument("panel")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--adjacency", help="also write the posterior-mean adjacency here")
    s.add_argument("--horizon", type=int, default=10)
    s.add_argument("--method", choices=("qbll", "rolling"), default="qbll")
    s.add_argument("--window", type=int, help="rolling window length (default 10 N p)")
    _add_tvp_args(s)
    s.set_defaults(func=cmd_network)

    s = sub.add_parser("classify", help="phase tables and hub classification")
    s.add_argument("connectedness")
    s.add_argument("-o", "--out", required=True, help="output directory")
    s.add_argument("--calendar")
    s.add_argument("--preset", choices=("default", "strict"), default="default")
    s.add_argument("--top-k", type=int, default=HubRule().top_k)
    s.add_argument("--bottom-k", type=int, default=HubRule().bottom_k)
    s.add_argument("--share", choices=("ratio", "daily"), default="ratio")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("predict", help="predictive regressions")
    s.add_argument("--macro", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--target-kind", choices=("level", "gdp_growth", "gdp_volatility"), default="level")
    s.add_argument("--connectedness")
    s.add_argument("--hubs")
    s.add_argument("--non-hubs")
    s.add_argument("--controls", help="ID[:transform],... with transform in level, diff, log_diff, growth")
    s.add_argument("--horizons", default=",".join(map(str, DEFAULT_HORIZONS)))
    s.add_argument("--threshold", type=float, help="split the target at this value (default by target id)")
    s.add_argument("--no-threshold", action="store_true")
    s.add_argument("--hac", action="store_true", help="report Newey-West standard errors")
    s.add_argument("-o", "--out", required=True, help="output directory")
    s.add_argument("--strict", action="store_true")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("pipeline", help="run every stage from a config file")
    s.add_argument("--config", help=f"INI file (default ${CONFIG_ENV})")
    s.add_argument("--demo", action="store_true", help="use the bundled synthetic fixture")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    s.add_argument("--out")
    s.add_argument("--workers", type=int)
    s.add_argument("--strict", action="store_true")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("demo-data", help="copy the bundled synthetic inputs")
    s.add_argument("out")
    s.set_defaults(func=cmd_demo_data)

    s = sub.add_parser("simulate-var", help="simulated panel with known coefficients")
    d = RegimeSpec()
    s.add_argument("--regime", choices=REGIMES, default=d.kind)
    s.add_argument("--n", type=int, default=d.n)
    s.add_argument("--T", type=int, default=500)
    s.add_argument("--own", type=float, default=d.own)
    s.add_argument("--cross-low", type=float, default=d.cross_low)
    s.add_argument("--cross-high", type=float, default=d.cross_high)
    s.add_argument("--level", type=float, default=d.level)
    s.add_argument("--vol", type=float, default=d.vol)
    s.add_argument("--corr", type=float, default=d.corr)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--start", default="2000-01-03")
    s.add_argument("--horizon", type=int, default=10)
    s.add_argument("--ref-points", type=int, default=5)
    s.add_argument("-o", "--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate_var)

    s = sub.add_parser("simulate-chains", help="Black-Scholes option chains")
    s.add_argument("--firms", default="F1")
    s.add_argument("--start", default="2020-01-02")
    s.add_argument("--days", type=int, default=1)
    s.add_argument("--vol", type=float, default=0.2)
    s.add_argument("--spot", type=float, default=100.0)
    s.add_argument("--rate", type=float, default=0.02)
    s.add_argument("--expiry-days", default="30")
    s.add_argument("--strike-step", type=float)
    s.add_argument("--n-sd", type=float, default=5.0)
    s.add_argument("--spread", type=float, default=0.0)
    s.add_argument("--zero-bid-below", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_simulate_chains)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NUMERICAL as exc:
        print(f"uncnet: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError) as exc:
        print(f"uncnet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
