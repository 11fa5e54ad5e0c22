"""Model-free implied volatility for single names.

A firm's 30-day VIX is computed from the out-of-the-money strip of one
expiry, following the CBOE single-term discretization:

    var_T = 2 * sum(dK_i / K_i**2 * exp(rT) * Q(K_i)) - (F / K0 - 1)**2

where ``var_T`` is the variance over the life of the option (``T`` years).
Dividing by ``T`` gives the annualized variance; :func:`annualize_vix`
turns a horizon variance into an annualized volatility.

A closed-form Black-Scholes pricer is provided as the test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.special import ndtr

DAYS_PER_YEAR = 365.0

Kind = Literal["call", "put"]


class OptionsError(ValueError):
    """Base class for option-chain failures."""


class MalformedQuote(OptionsError):
    pass


class NoParityStrike(OptionsError):
    pass


class EmptySelection(OptionsError):
    pass


class NoK0(OptionsError):
    pass


class NegativeVariance(OptionsError):
    pass


class NegativeInput(OptionsError):
    pass


class DomainError(OptionsError):
    pass


@dataclass(frozen=True)
class OptionQuote:
    strike: float
    bid: float
    ask: float
    kind: Kind

    def __post_init__(self) -> None:
        if self.kind not in ("call", "put"):
            raise MalformedQuote(f"unknown option kind {self.kind!r}")
        if not (self.strike > 0 and math.isfinite(self.strike)):
            raise MalformedQuote(f"strike must be positive, got {self.strike}")
        if not (self.bid >= 0 and math.isfinite(self.bid)):
            raise MalformedQuote(f"bid must be non-negative, got {self.bid}")
        if not (self.ask >= self.bid and math.isfinite(self.ask)):
            raise MalformedQuote(f"crossed quote: bid {self.bid} > ask {self.ask}")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class OptionChain:
    """All quotes of one underlying, one quote date and one expiry."""

    underlying_id: str
    quote_date: date
    expiry_date: date
    spot: float
    risk_free_rate: float
    quotes: tuple[OptionQuote, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.expiry_date <= self.quote_date:
            raise OptionsError(
                f"{self.underlying_id}: expiry {self.expiry_date} not after quote date {self.quote_date}"
            )
        if not self.spot > 0:
            raise OptionsError(f"{self.underlying_id}: spot must be positive")
        object.__setattr__(self, "quotes", _dedupe(self.quotes))

    @property
    def days(self) -> int:
        return (self.expiry_date - self.quote_date).days

    @property
    def T(self) -> float:
        return self.days / DAYS_PER_YEAR

    def side(self, kind: Kind) -> dict[float, OptionQuote]:
        return {q.strike: q for q in self.quotes if q.kind == kind}


@dataclass(frozen=True)
class FirmVixPoint:
    firm_id: str
    date: date
    vix: float

    def __post_init__(self) -> None:
        if not (self.vix > 0 and math.isfinite(self.vix)):
            raise OptionsError(f"{self.firm_id} {self.date}: vix must be positive and finite")


@dataclass(frozen=True)
class OTMSelection:
    """Strikes and mid quotes entering the variance sum, in increasing strike order."""

    strikes: np.ndarray
    mids: np.ndarray
    k0: float


@dataclass(frozen=True)
class VixConfig:
    """Quote filtering and expiry policy.

    ``zero_bid_stop`` consecutive zero-bid strikes end a wing; ``min_strikes``
    is the smallest strip accepted. ``annualize_days`` of ``None`` annualizes
    with the chain's own day count, otherwise with the fixed horizon given.
    """

    zero_bid_stop: int = 2
    min_strikes: int = 3
    target_days: int = 30
    annualize_days: int | None = None


def _dedupe(quotes: Iterable[OptionQuote]) -> tuple[OptionQuote, ...]:
    # keep the best quote per (strike, kind): highest bid, then tightest ask
    best: dict[tuple[float, str], OptionQuote] = {}
    for q in quotes:
        key = (q.strike, q.kind)
        cur = best.get(key)
        if cur is None or (q.bid, -q.ask) > (cur.bid, -cur.ask):
            best[key] = q
    return tuple(best[k] for k in sorted(best))


def bs_price(spot, strike, rate, T, vol, kind: Kind = "call"):
    """European Black-Scholes price (no dividends). Broadcasts over array inputs."""
    spot, strike, T, vol = (np.asarray(a, dtype=float) for a in (spot, strike, T, vol))
    if np.any(spot <= 0) or np.any(strike <= 0) or np.any(T <= 0) or np.any(vol <= 0):
        raise DomainError("spot, strike, T and vol must be positive")
    if kind not in ("call", "put"):
        raise DomainError(f"unknown option kind {kind!r}")
    sd = vol * np.sqrt(T)
    d1 = (np.log(spot / strike) + (rate + 0.5 * vol**2) * T) / sd
    d2 = d1 - sd
    disc = strike * np.exp(-rate * T)
    if kind == "call":
        out = spot * ndtr(d1) - disc * ndtr(d2)
    else:
        out = disc * ndtr(-d2) - spot * ndtr(-d1)
    return out[()] if out.ndim == 0 else out


def forward_price(chain: OptionChain) -> float:
    """Forward level from put-call parity at the strike where |C - P| is smallest."""
    calls, puts = chain.side("call"), chain.side("put")
    candidates = [
        (abs(calls[k].mid - puts[k].mid), k)
        for k in calls.keys() & puts.keys()
        if calls[k].mid > 0 and puts[k].mid > 0
    ]
    if not candidates:
        raise NoParityStrike(f"{chain.underlying_id} {chain.quote_date}: no strike quotes both a call and a put")
    _, k = min(candidates)
    return math.exp(chain.risk_free_rate * chain.T) * (calls[k].mid - puts[k].mid) + k


def _walk_wing(strikes: Sequence[float], side: dict[float, OptionQuote], stop: int) -> list[tuple[float, float]]:
    kept, zeros = [], 0
    for k in strikes:
        q = side.get(k)
        if q is None:
            continue
        if q.bid <= 0:
            zeros += 1
            if zeros >= stop:
                break
            continue
        zeros = 0
        kept.append((k, q.mid))
    return kept


def select_otm_quotes(chain: OptionChain, F: float, zero_bid_stop: int = 2) -> OTMSelection:
    """Pick the out-of-the-money strip around ``K0``, the largest strike not above ``F``.

    Puts below ``K0``, calls above it, and the call/put average at ``K0``.
    Zero-bid quotes are skipped and each wing ends after ``zero_bid_stop``
    consecutive zero bids.
    """
    calls, puts = chain.side("call"), chain.side("put")
    strikes = sorted(calls.keys() | puts.keys())
    below = [k for k in strikes if k <= F]
    if not below:
        raise NoK0(f"{chain.underlying_id} {chain.quote_date}: every strike exceeds the forward {F:.6g}")
    k0 = below[-1]

    put_wing = _walk_wing([k for k in reversed(strikes) if k < k0], puts, zero_bid_stop)
    call_wing = _walk_wing([k for k in strikes if k > k0], calls, zero_bid_stop)
    atm = [q.mid for q in (calls.get(k0), puts.get(k0)) if q is not None and q.bid > 0]

    pairs = put_wing[::-1] + ([(k0, sum(atm) / len(atm))] if atm else []) + call_wing
    if not pairs:
        raise EmptySelection(f"{chain.underlying_id} {chain.quote_date}: no quote survives filtering")
    ks, qs = zip(*pairs)
    return OTMSelection(np.array(ks), np.array(qs), k0)


def strike_increments(strikes: np.ndarray) -> np.ndarray:
    """Central half-differences inside the strip, one-sided at both wings."""
    dk = np.empty_like(strikes)
    dk[1:-1] = 0.5 * (strikes[2:] - strikes[:-2])
    dk[0] = strikes[1] - strikes[0]
    dk[-1] = strikes[-1] - strikes[-2]
    return dk


def implied_variance(chain: OptionChain, config: VixConfig | None = None) -> float:
    """Model-free variance over the life of the chain (not annualized)."""
    config = config or VixConfig()
    F = forward_price(chain)
    sel = select_otm_quotes(chain, F, config.zero_bid_stop)
    if sel.strikes.size < max(config.min_strikes, 2):
        raise EmptySelection(
            f"{chain.underlying_id} {chain.quote_date}: {sel.strikes.size} strikes, need {config.min_strikes}"
        )
    dk = strike_increments(sel.strikes)
    growth = math.exp(chain.risk_free_rate * chain.T)
    var = 2.0 * growth * float(np.sum(dk / sel.strikes**2 * sel.mids)) - (F / sel.k0 - 1.0) ** 2
    if not var > 0:
        raise NegativeVariance(f"{chain.underlying_id} {chain.quote_date}: variance {var:.3g} is not positive")
    return var


def annualize_vix(sigma2: float, horizon_days: float = 30) -> float:
    """Annualized volatility ``sqrt(365 / horizon_days * sigma2)``."""
    if sigma2 < 0:
        raise NegativeInput(f"variance must be non-negative, got {sigma2}")
    if horizon_days <= 0:
        raise NegativeInput(f"horizon must be positive, got {horizon_days}")
    return math.sqrt(DAYS_PER_YEAR / horizon_days * sigma2)


def nearest_expiry(chains: Sequence[OptionChain], target_days: int = 30) -> OptionChain:
    """The chain whose expiry is closest to ``target_days``; ties go to the longer expiry."""
    if not chains:
        raise EmptySelection("no expiries to choose from")
    return min(chains, key=lambda c: (abs(c.days - target_days), -c.days))


def firm_vix(chains: Sequence[OptionChain], config: VixConfig | None = None) -> FirmVixPoint:
    """VIX of one firm on one date from its listed expiries."""
    config = config or VixConfig()
    chain = nearest_expiry(chains, config.target_days)
    var = implied_variance(chain, config)
    days = config.annualize_days or chain.days
    return FirmVixPoint(chain.underlying_id, chain.quote_date, annualize_vix(var, days))
