"""Synthetic data with known truth: VAR panels and Black-Scholes option chains."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .options_iv import bs_price
from .tvp_var import spectral_radius

REGIMES = ("constant", "break", "smooth", "one-way")


class UnstableSpec(ValueError):
    pass


@dataclass(frozen=True)
class RegimeSpec:
    """Coefficient path of a simulated VAR(1) around a positive mean level.

    ``kind`` chooses how cross-lag coefficients move over rescaled time ``u``:
    ``constant`` keeps ``cross_low``, ``break`` jumps to ``cross_high`` at
    ``u = 0.5``, ``smooth`` moves linearly between the two, and ``one-way``
    loads only the first variable onto every other one with ``cross_high``.
    """

    kind: str = "constant"
    n: int = 3
    own: float = 0.5
    cross_low: float = 0.02
    cross_high: float = 0.25
    level: float = 0.3
    vol: float = 0.01
    corr: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in REGIMES:
            raise ValueError(f"unknown regime {self.kind!r}; choose from {REGIMES}")

    def cross(self, u: float) -> float:
        if self.kind in ("constant", "one-way"):
            return self.cross_low if self.kind == "constant" else self.cross_high
        if self.kind == "break":
            return self.cross_low if u < 0.5 else self.cross_high
        return self.cross_low + (self.cross_high - self.cross_low) * u

    def phi(self, u: float) -> np.ndarray:
        n = self.n
        if self.kind == "one-way":
            m = self.own * np.eye(n)
            m[1:, 0] = self.cross_high
        else:
            m = self.own * np.eye(n) + self.cross(u) * (1 - np.eye(n))
        return m[None]

    def sigma(self, u: float) -> np.ndarray:
        n = self.n
        corr = self.corr * np.ones((n, n)) + (1 - self.corr) * np.eye(n)
        return self.vol**2 * corr

    def intercept(self, u: float) -> np.ndarray:
        return (np.eye(self.n) - self.phi(u).sum(axis=0)) @ np.full(self.n, self.level)


def simulate_var(
    T: int,
    phi: Callable[[float], np.ndarray],
    intercept: Callable[[float], np.ndarray],
    sigma: Callable[[float], np.ndarray],
    seed: int,
    burn: int = 200,
) -> np.ndarray:
    """Simulate ``x_t = c(u) + sum_l Phi_l(u) x_{t-l} + eps_t`` with ``u = t / T``.

    The burn-in runs at ``u = 0`` and starts at the implied mean.
    """
    rng = np.random.default_rng(seed)
    phi0 = phi(0.0)
    p, n, _ = phi0.shape
    for u in np.linspace(0, 1, 21):
        if spectral_radius(phi(u)) >= 1:
            raise UnstableSpec(f"coefficients are explosive at u={u:.2f}")
    mean0 = np.linalg.solve(np.eye(n) - phi0.sum(axis=0), intercept(0.0))
    x = np.tile(mean0, (burn + T, 1))
    shocks = rng.standard_normal((burn + T, n))
    for s in range(p, burn + T):
        u = max(s - burn, 0) / T
        ph = phi(u)
        mu = intercept(u) + sum(ph[l] @ x[s - 1 - l] for l in range(p))
        x[s] = mu + np.linalg.cholesky(sigma(u)) @ shocks[s]
    return x[burn:]


def simulate_regime(spec: RegimeSpec, T: int, seed: int) -> np.ndarray:
    return simulate_var(T, spec.phi, spec.intercept, spec.sigma, seed)


def simulate_chain_frame(
    firms: Sequence[str],
    dates: Sequence[date],
    vol: float | dict[str, float] = 0.2,
    spot0: float = 100.0,
    rate: float = 0.02,
    expiry_days: Sequence[int] = (30,),
    strike_step: float | None = None,
    n_sd: float = 5.0,
    spread: float = 0.0,
    zero_bid_below: float = 0.0,
    seed: int = 0,
) -> pd.DataFrame:
    """Option-chain rows in the ingestion CSV layout.

    Spots follow a geometric Brownian motion at each firm's volatility.
    Quotes are Black-Scholes prices with a relative half ``spread``; quotes
    priced below ``zero_bid_below`` get a zero bid, which creates the
    deep-wing zero-bid strikes that the selection rule truncates.
    """
    rng = np.random.default_rng(seed)
    vols = vol if isinstance(vol, dict) else {f: float(vol) for f in firms}
    rows = []
    for firm in firms:
        v = vols[firm]
        spot = spot0
        prev = None
        for d in dates:
            if prev is not None:
                dt = (d - prev).days / 365.0
                spot *= math.exp((rate - 0.5 * v * v) * dt + v * math.sqrt(dt) * rng.standard_normal())
            prev = d
            step = strike_step or max(round(spot / 200.0, 2), 0.01)
            for days in expiry_days:
                T = days / 365.0
                sd = v * math.sqrt(T)
                lo = math.floor(spot * math.exp(-n_sd * sd) / step) * step
                ks = np.round(np.arange(max(lo, step), spot * math.exp(n_sd * sd) + step / 2, step), 6)
                expiry = d + timedelta(days=days)
                for kind in ("call", "put"):
                    px = np.atleast_1d(bs_price(spot, ks, rate, T, v, kind))
                    bid = px * (1 - spread)
                    ask = px * (1 + spread)
                    zero = px < zero_bid_below
                    bid[zero] = 0.0
                    ask[zero] = np.maximum(ask[zero], zero_bid_below)
                    for k, b, a in zip(ks, bid, ask):
                        rows.append((d.isoformat(), expiry.isoformat(), firm, spot, rate, float(k), kind, float(b), float(a)))
    cols = ["quote_date", "expiry_date", "firm_id", "spot", "rate", "strike", "kind", "bid", "ask"]
    return pd.DataFrame(rows, columns=cols)


def demo_dataset(n_industries: int = 6, T: int = 600, seed: int = 7, start: str = "2006-06-01") -> dict[str, pd.DataFrame]:
    """Synthetic inputs for an end-to-end run: firm VIX, caps, membership, macro.

    Industry levels follow a VAR(1) whose cross-industry spillovers strengthen
    halfway through; two firms per industry scatter around the industry level.
    One firm switches industry mid-sample.
    """
    rng = np.random.default_rng(seed)
    labels = [f"I{i + 1}" for i in range(n_industries)]
    regime = RegimeSpec("smooth", n=n_industries, own=0.6, cross_low=0.01, cross_high=0.06, level=0.3, vol=0.012, corr=0.2)
    levels = simulate_regime(regime, T, seed)
    dates = pd.bdate_range(start, periods=T)
    vix_rows, cap_rows, mem_rows = [], [], []
    for j, lab in enumerate(labels):
        for f in ("a", "b"):
            firm = f"{lab}{f}"
            noise = np.exp(0.03 * rng.standard_normal(T))
            vix = np.abs(levels[:, j]) * noise
            cap = 50.0 * np.exp(np.cumsum(0.01 * rng.standard_normal(T))) * (2.0 if f == "a" else 1.0)
            vix_rows += [(firm, d.date().isoformat(), float(v)) for d, v in zip(dates, vix)]
            cap_rows += [(firm, d.date().isoformat(), float(c)) for d, c in zip(dates, cap)]
            mem_rows.append((firm, lab, dates[0].date().isoformat(), dates[-1].date().isoformat()))
    # the second firm of the last industry moves to the first industry halfway through
    mover = f"{labels[-1]}b"
    mid = dates[T // 2]
    mem_rows = [r for r in mem_rows if r[0] != mover]
    mem_rows.append((mover, labels[-1], dates[0].date().isoformat(), (mid - pd.Timedelta(days=1)).date().isoformat()))
    mem_rows.append((mover, labels[0], mid.date().isoformat(), dates[-1].date().isoformat()))

    months = pd.period_range(dates[0], dates[-1], freq="M")
    level_m = pd.Series(levels.mean(axis=1), index=dates).groupby(dates.to_period("M")).mean().reindex(months)
    z = (level_m - level_m.mean()) / level_m.std()
    activity = -0.5 * z.shift(-1).fillna(0.0) + 0.3 * rng.standard_normal(len(months))
    macro_rows = []
    for m, v in zip(months, activity):
        macro_rows.append(("CFNAI", str(m), float(v)))
    oil = 60 * np.exp(np.cumsum(0.05 * rng.standard_normal(len(months))))
    ts = 1.5 + np.cumsum(0.1 * rng.standard_normal(len(months)))
    macro_rows += [("OIL", str(m), float(v)) for m, v in zip(months, oil)]
    macro_rows += [("TS", str(m), float(v)) for m, v in zip(months, ts)]
    return {
        "firm_vix": pd.DataFrame(vix_rows, columns=["firm_id", "date", "vix"]),
        "caps": pd.DataFrame(cap_rows, columns=["firm_id", "date", "market_cap"]),
        "membership": pd.DataFrame(mem_rows, columns=["firm_id", "industry_id", "start", "end"]),
        "macro": pd.DataFrame(macro_rows, columns=["id", "period", "value"]),
    }
