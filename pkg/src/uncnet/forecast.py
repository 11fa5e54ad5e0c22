"""Predictive regressions of business-cycle indicators on connectedness."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

log = logging.getLogger(__name__)

TRANSFORMS = ("level", "diff", "log_diff", "growth")
THRESHOLDS = {"CFNAI": -0.72, "ADS": -0.80}
DEFAULT_HORIZONS = (1, 3, 6, 9, 12)


class ForecastError(ValueError):
    pass


class InsufficientSample(ForecastError):
    pass


class CollinearDesign(ForecastError):
    pass


class NonPositiveLevel(ForecastError):
    pass


@dataclass(frozen=True)
class MacroSeries:
    """One monthly or quarterly series indexed by ``pd.Period``.

    ``transform`` is applied by ``transformed()``; differences drop the first
    period.
    """

    id: str
    values: pd.Series
    transform: str = "level"

    def __post_init__(self) -> None:
        v = self.values
        if not isinstance(v.index, pd.PeriodIndex):
            v = pd.Series(v.to_numpy(float), index=pd.PeriodIndex(v.index), name=self.id)
        else:
            v = v.astype(float).rename(self.id)
        if v.index.freqstr[0] not in "MQ":
            raise ForecastError(f"{self.id}: frequency must be monthly or quarterly, got {v.index.freqstr}")
        if not v.index.is_unique:
            raise ForecastError(f"{self.id}: duplicate periods")
        if not v.index.is_monotonic_increasing:
            raise ForecastError(f"{self.id}: periods must be increasing")
        if self.transform not in TRANSFORMS:
            raise ForecastError(f"{self.id}: unknown transform {self.transform!r}")
        object.__setattr__(self, "values", v)

    @property
    def frequency(self) -> str:
        return "monthly" if self.values.index.freqstr.startswith("M") else "quarterly"

    def __len__(self) -> int:
        return len(self.values)

    def with_transform(self, transform: str) -> "MacroSeries":
        return MacroSeries(self.id, self.values, transform)

    def transformed(self) -> pd.Series:
        v = self.values
        if self.transform == "level":
            return v
        # differences only use adjacent periods; a missing period leaves a gap
        prev = _moved(v, 1).reindex(v.index)
        if self.transform == "diff":
            out = v - prev
        elif self.transform == "growth":
            out = v / prev - 1.0
        else:
            if np.any(v <= 0):
                raise NonPositiveLevel(f"{self.id}: log differences need positive levels")
            out = np.log(v / prev)
        return out.dropna()


def _moved(v: pd.Series, k: int) -> pd.Series:
    # value of period t - k placed at t
    return pd.Series(v.to_numpy(), index=v.index + k)


def _periodize(daily: pd.Series, freq: str) -> pd.Series:
    idx = pd.DatetimeIndex(daily.index)
    grouped = daily.groupby(idx.to_period(freq)).mean()
    return grouped.dropna()


def monthly_aggregate(daily: pd.Series, id: str = "C") -> MacroSeries:
    """Calendar-month mean of a daily series; months without observations do not appear."""
    return MacroSeries(id, _periodize(daily.dropna(), "M"))


def quarterly_aggregate(daily: pd.Series, id: str = "C") -> MacroSeries:
    return MacroSeries(id, _periodize(daily.dropna(), "Q"))


def threshold_decompose(y: MacroSeries, tau: float) -> tuple[MacroSeries, MacroSeries]:
    """Censor at ``tau``: expansion proxy ``max(y, tau)``, recession proxy ``min(y, tau)``."""
    v = y.transformed()
    return (
        MacroSeries(f"{y.id}_exp", v.clip(lower=tau)),
        MacroSeries(f"{y.id}_rec", v.clip(upper=tau)),
    )


@dataclass
class RegressionResult:
    target: str
    horizon: int
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    se_hac: np.ndarray | None
    r2: float
    adj_r2: float
    nobs: int
    first_period: str
    last_period: str
    resid: np.ndarray = field(repr=False)

    @property
    def dof(self) -> int:
        return self.nobs - len(self.names)

    def reported_se(self, hac: bool = False) -> np.ndarray:
        if hac:
            if self.se_hac is None:
                raise ForecastError("HAC standard errors were not computed")
            return self.se_hac
        return self.se

    def pvalues(self, hac: bool = False) -> np.ndarray:
        t = self.coef / self.reported_se(hac)
        return 2 * stats.t.sf(np.abs(t), self.dof)

    def stars(self, hac: bool = False) -> list[str]:
        return [significance_stars(p) for p in self.pvalues(hac)]

    def to_dict(self, hac: bool = False) -> dict:
        return {
            "target": self.target,
            "horizon": self.horizon,
            "nobs": self.nobs,
            "first_period": self.first_period,
            "last_period": self.last_period,
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "coefficients": {
                n: {
                    "coef": float(c),
                    "se": float(s),
                    "se_hac": None if self.se_hac is None else float(self.se_hac[i]),
                    "pvalue": float(p),
                }
                for i, (n, c, s, p) in enumerate(zip(self.names, self.coef, self.se, self.pvalues(hac)))
            },
        }


def significance_stars(p: float) -> str:
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""


def newey_west(X: np.ndarray, resid: np.ndarray, lags: int) -> np.ndarray:
    """Bartlett-kernel HAC covariance of OLS coefficients, without small-sample scaling."""
    xu = X * resid[:, None]
    S = xu.T @ xu
    for l in range(1, lags + 1):
        w = 1.0 - l / (lags + 1.0)
        G = xu[l:].T @ xu[:-l]
        S += w * (G + G.T)
    bread = np.linalg.inv(X.T @ X)
    return bread @ S @ bread


def align(y: MacroSeries, predictors: Sequence[MacroSeries], h: int) -> tuple[pd.Series, pd.DataFrame]:
    """Rows ``t`` where every predictor is observed at ``t`` and the target at ``t + h``."""
    yv = y.transformed()
    freq = y.values.index.freq
    for p in predictors:
        if p.values.index.freq != freq:
            raise ForecastError(f"{p.id} is {p.frequency} but the target {y.id} is {y.frequency}")
    X = pd.concat([p.transformed().rename(p.id) for p in predictors], axis=1, join="inner")
    lead = _moved(yv, -h).reindex(X.index)
    ok = lead.notna() & X.notna().all(axis=1)
    return lead[ok], X[ok]


def predictive_regression(
    y: MacroSeries,
    predictors: Sequence[MacroSeries],
    h: int,
    hac: bool = True,
) -> RegressionResult:
    """OLS of ``y_{t+h}`` on an intercept and the predictors at ``t``.

    Parameters
    ----------
    y : MacroSeries
        Target; its transform is applied before shifting.
    predictors : sequence of MacroSeries
        Regressors in output order; ids must be unique.
    h : int
        Horizon in periods of the common frequency, at least 0.
    hac : bool
        Also compute Newey-West standard errors with ``h`` Bartlett lags.

    Raises
    ------
    InsufficientSample
        Fewer than ``len(predictors) + 2`` aligned rows.
    CollinearDesign
        Condition number of the column-equilibrated design above 1e10.
    """
    if h < 0:
        raise ValueError("horizon must be non-negative")
    ids = [p.id for p in predictors]
    if len(set(ids)) != len(ids):
        raise ForecastError(f"duplicate predictor ids {ids}")
    target, X = align(y, predictors, h)
    n, k = len(target), len(predictors)
    if n < k + 2:
        raise InsufficientSample(f"{y.id} h={h}: {n} aligned rows for {k} predictors")
    design = np.column_stack([np.ones(n), X.to_numpy(float)])
    norms = np.linalg.norm(design, axis=0)
    if np.any(norms == 0) or np.linalg.cond(design / norms) > 1e10:
        raise CollinearDesign(f"{y.id} h={h}: regressors are collinear")
    yy = target.to_numpy(float)
    beta, *_ = np.linalg.lstsq(design, yy, rcond=None)
    resid = yy - design @ beta
    rss = float(resid @ resid)
    dev = yy - yy.mean()
    tss = float(dev @ dev)
    dof = n - k - 1
    xtx_inv = np.linalg.inv(design.T @ design)
    se = np.sqrt(np.maximum(rss / dof * np.diag(xtx_inv), 0.0))
    r2 = 1.0 - rss / tss if tss > 0 else math.nan
    adj = 1.0 - (1.0 - r2) * (n - 1) / dof if tss > 0 else math.nan
    se_hac = np.sqrt(np.maximum(np.diag(newey_west(design, resid, h)), 0.0)) if hac else None
    return RegressionResult(
        y.id, h, ("const", *ids), beta, se, se_hac, r2, adj, n, str(target.index[0]), str(target.index[-1]), resid
    )


def horizon_suite(
    y: MacroSeries,
    predictors: Sequence[MacroSeries],
    horizons: Iterable[int] = DEFAULT_HORIZONS,
    hac: bool = True,
) -> dict[int, RegressionResult]:
    """One regression per horizon, keyed and ordered by horizon."""
    return {h: predictive_regression(y, predictors, h, hac) for h in sorted(set(horizons))}


def results_table(results: Mapping[int, RegressionResult], hac: bool = False, digits: int = 4) -> pd.DataFrame:
    """Display layout: a coefficient row with stars and a bracketed SE row per regressor, then adjusted R-squared and Obs."""
    cols = {}
    for h, res in results.items():
        se = res.reported_se(hac)
        cells = {}
        for name, c, s, star in zip(res.names, res.coef, se, res.stars(hac)):
            cells[name] = f"{c:.{digits}f}{star}"
            cells[f"{name} (se)"] = f"({s:.{digits}f})"
        cells["adj. R2"] = f"{res.adj_r2:.{digits}f}"
        cells["Obs"] = str(res.nobs)
        cols[f"h={h}"] = cells
    return pd.DataFrame(cols)


def results_json(results: Mapping[int, RegressionResult], hac: bool = False) -> str:
    return json.dumps([r.to_dict(hac) for r in results.values()], indent=2, sort_keys=True)


def gdp_growth(gdp: MacroSeries) -> MacroSeries:
    """Forward log growth ``g_t = log(GDP_{t+1} / GDP_t)``, labelled at ``t``."""
    v = gdp.values
    if np.any(v <= 0):
        raise NonPositiveLevel(f"{gdp.id}: GDP levels must be positive")
    nxt = _moved(v, -1).reindex(v.index)
    return MacroSeries(f"{gdp.id}_growth", np.log(nxt / v).dropna())


def gdp_volatility(growth: MacroSeries, window: int = 4) -> MacroSeries:
    """Rolling sample standard deviation over ``window`` quarters times 2, labelled at the window end."""
    v = growth.transformed()
    if len(v) < window:
        raise InsufficientSample(f"{growth.id}: {len(v)} observations for a window of {window}")
    vol = v.rolling(window).std(ddof=1) * 2.0
    return MacroSeries(f"{growth.id}_vol", vol.dropna())


def macro_from_frame(frame: pd.DataFrame, transforms: Mapping[str, str] | None = None) -> dict[str, MacroSeries]:
    """Split a long ``id, period, value`` table into series."""
    transforms = transforms or {}
    out = {}
    for sid, grp in frame.groupby("id", sort=True):
        periods = pd.PeriodIndex([pd.Period(str(p)) for p in grp["period"]])
        s = pd.Series(grp["value"].to_numpy(float), index=periods).sort_index()
        out[str(sid)] = MacroSeries(str(sid), s, transforms.get(str(sid), "level"))
    return out


def macro_to_frame(series: Iterable[MacroSeries]) -> pd.DataFrame:
    rows = [(s.id, str(p), float(v)) for s in series for p, v in s.values.items()]
    return pd.DataFrame(rows, columns=["id", "period", "value"])
