"""Independent reference computations used by the test-suite.

Nothing here calls into the code paths it is used to check, other than the
closed-form pricer which is itself validated against mpmath.
"""

from __future__ import annotations

import math
from datetime import date, timedelta

import numpy as np
from scipy import integrate

from uncnet.options_iv import OptionChain, OptionQuote, bs_price

QUOTE_DATE = date(2020, 1, 2)

# total-period AGG by industry (reference values)
REFERENCE_AGG = {
    "CD": 29.61, "CM": 30.49, "CS": 24.27, "E": 28.27, "F": 22.15, "HC": 26.45,
    "IN": 31.47, "IT": 33.71, "M": 15.84, "RE": 14.22, "U": 9.59,
}  # fmt: skip


def bs_chain(
    spot=100.0,
    rate=0.02,
    days=30,
    vol=0.2,
    step=None,
    n_sd=5.0,
    lo=None,
    hi=None,
    spread=0.0,
    firm="X",
    quote_date=QUOTE_DATE,
) -> OptionChain:
    """Arbitrage-free chain of calls and puts on a uniform strike grid."""
    T = days / 365.0
    sd = vol * math.sqrt(T)
    step = step or spot / 200.0
    lo = lo if lo is not None else spot * math.exp(-n_sd * sd)
    hi = hi if hi is not None else spot * math.exp(n_sd * sd)
    ks = np.arange(math.floor(lo / step) * step, hi + step / 2, step)
    ks = ks[ks > 0]
    quotes = []
    for kind in ("call", "put"):
        px = np.atleast_1d(bs_price(spot, ks, rate, T, vol, kind))
        for k, p in zip(ks, px):
            half = spread * p
            quotes.append(OptionQuote(float(k), float(p - half), float(p + half), kind))
    return OptionChain(firm, quote_date, quote_date + timedelta(days=days), spot, rate, tuple(quotes))


def bkm_variance(spot, rate, T, vol, n_sd=12.0) -> float:
    """Continuous-strike quadratic-contract integral (Bakshi-Kapadia-Madan), grossed up by exp(rT)."""
    sd = vol * math.sqrt(T)
    call = lambda k: 2 * (1 - math.log(k / spot)) / k**2 * bs_price(spot, k, rate, T, vol, "call")
    put = lambda k: 2 * (1 + math.log(spot / k)) / k**2 * bs_price(spot, k, rate, T, vol, "put")
    upper = spot * math.exp(n_sd * sd)
    lower = spot * math.exp(-n_sd * sd)
    c, _ = integrate.quad(call, spot, upper, epsabs=1e-14, epsrel=1e-12, limit=400)
    p, _ = integrate.quad(put, lower, spot, epsabs=1e-14, epsrel=1e-12, limit=400)
    return math.exp(rate * T) * (c + p)


def log_contract_variance(spot, rate, T, vol, n_sd=12.0) -> float:
    """Continuous-strike version of the discretized VIX sum, split at the forward."""
    F = spot * math.exp(rate * T)
    sd = vol * math.sqrt(T)
    call = lambda k: bs_price(spot, k, rate, T, vol, "call") / k**2
    put = lambda k: bs_price(spot, k, rate, T, vol, "put") / k**2
    c, _ = integrate.quad(call, F, spot * math.exp(n_sd * sd), epsabs=1e-15, epsrel=1e-12, limit=400)
    p, _ = integrate.quad(put, spot * math.exp(-n_sd * sd), F, epsabs=1e-15, epsrel=1e-12, limit=400)
    return 2 * math.exp(rate * T) * (c + p)


def companion_psi(phi: np.ndarray, H: int) -> np.ndarray:
    """VMA coefficients read off powers of the companion matrix."""
    p, n, _ = phi.shape
    comp = np.zeros((n * p, n * p))
    comp[:n, :] = np.hstack(list(phi))
    comp[n:, :-n] = np.eye(n * (p - 1))
    out = np.empty((H + 1, n, n))
    power = np.eye(n * p)
    for h in range(H + 1):
        out[h] = power[:n, :n]
        power = power @ comp
    return out


def ols_var(y: np.ndarray, p: int):
    """Equation-by-equation least squares VAR(p) with intercept; returns (B, resid)."""
    T, n = y.shape
    rows = [np.concatenate([[1.0], *[y[t - l] for l in range(1, p + 1)]]) for t in range(p, T)]
    X = np.array(rows)
    Y = y[p:]
    B = np.column_stack([np.linalg.lstsq(X, Y[:, i], rcond=None)[0] for i in range(n)])
    return B, Y - X @ B


def mc_gfevd(phi: np.ndarray, sigma: np.ndarray, H: int, n_paths: int, seed: int, chunk: int = 100_000) -> np.ndarray:
    """Monte Carlo generalized FEVD from simulated shock paths.

    For each simulated path of H+1 future shocks the unconditional forecast
    error and the error conditional on the k-th shock sequence are formed
    explicitly by propagating the shocks through the VAR recursion. The
    variance reduction from conditioning equals the variance of the
    conditional forecast ``e - xi`` (orthogonal to ``xi`` for Gaussian
    shocks), which is the lower-variance sample moment used here.
    """
    rng = np.random.default_rng(seed)
    p, n, _ = phi.shape
    L = np.linalg.cholesky(sigma)
    s_err = np.zeros(n)
    s_red = np.zeros((n, n))
    done = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        eps = rng.standard_normal((m, H + 1, n)) @ L.T
        err = _propagate(phi, eps)
        s_err += np.sum(err**2, axis=0)
        for k in range(n):
            proj = eps[:, :, [k]] * (sigma[:, k] / sigma[k, k])
            cond = _propagate(phi, eps - proj)
            s_red[:, k] += np.sum((err - cond) ** 2, axis=0)
        done += m
    return s_red / s_err[:, None]


def _propagate(phi: np.ndarray, eps: np.ndarray) -> np.ndarray:
    # y_s = sum_l Phi_l y_{s-l} + eps_s from a zero start; returns the last state
    m, steps, n = eps.shape
    p = phi.shape[0]
    hist = [np.zeros((m, n)) for _ in range(p)]
    for s in range(steps):
        y = eps[:, s].copy()
        for l in range(p):
            y += hist[-1 - l] @ phi[l].T
        hist.append(y)
        hist.pop(0)
    return hist[-1]


def normal_cdf_mp(x: float) -> float:
    import mpmath

    mpmath.mp.dps = 40
    return float(mpmath.ncdf(x))


CONTROL_TRANSFORMS = {
    "OIL": "log_diff",
    "TS": "level",
    "UR": "level",
    "VIX": "diff",
    "SPX": "log_diff",
    "COMM": "log_diff",
    "CSHP": "log_diff",
}


def planted_regression(n_months: int, h: int, coef: float, seed: int, start: str = "2000-01", noise: float = 0.3):
    """Monthly raw levels of a connectedness index and seven controls plus a target built as
    ``y_{t+h} = 0.1 + coef * C_t + sum_i beta_i x_{i,t} + e`` on the transformed controls.

    Returns ``(target, predictors, beta)`` where predictors are MacroSeries with their transforms.
    """
    import pandas as pd

    from uncnet.forecast import MacroSeries

    rng = np.random.default_rng(seed)
    periods = pd.period_range(start, periods=n_months, freq="M")
    c = 45 + np.cumsum(rng.standard_normal(n_months)) * 0.8 + 5 * rng.standard_normal(n_months)
    raw = {
        "OIL": 60 * np.exp(np.cumsum(0.08 * rng.standard_normal(n_months))),
        "TS": 1.5 + np.cumsum(0.15 * rng.standard_normal(n_months)),
        "UR": 5 + np.cumsum(0.1 * rng.standard_normal(n_months)),
        "VIX": 20 + 5 * np.abs(rng.standard_normal(n_months)),
        "SPX": 1500 * np.exp(np.cumsum(0.04 * rng.standard_normal(n_months))),
        "COMM": 100 * np.exp(np.cumsum(0.05 * rng.standard_normal(n_months))),
        "CSHP": 150 * np.exp(np.cumsum(0.005 + 0.01 * rng.standard_normal(n_months))),
    }
    preds = [MacroSeries("C", pd.Series(c, index=periods))]
    preds += [MacroSeries(k, pd.Series(v, index=periods), CONTROL_TRANSFORMS[k]) for k, v in raw.items()]
    beta = np.array([0.5, 0.2, -0.1, -0.03, 2.0, 0.8, 5.0])
    X = pd.concat([p.transformed().rename(p.id) for p in preds], axis=1, join="inner")
    signal = 0.1 + coef * X["C"].to_numpy() + X[list(raw)].to_numpy() @ beta
    y = pd.Series(np.nan, index=periods)
    target_periods = X.index + h
    inside = target_periods <= periods[-1]
    y[target_periods[inside]] = signal[inside] + noise * rng.standard_normal(inside.sum())
    # the first h + 1 target months precede any usable predictor and are filled with noise
    y[y.isna()] = noise * rng.standard_normal(int(y.isna().sum()))
    return MacroSeries("Y", y), preds, beta
