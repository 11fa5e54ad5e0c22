"""Cap-weighted industry uncertainty indexes from firm-level VIX series."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


class PanelError(ValueError):
    pass


class EmptyIndustryDay(PanelError):
    pass


class MismatchedFirms(PanelError):
    pass


class UnfillableGap(PanelError):
    def __init__(self, industry: str, date):
        super().__init__(f"industry {industry!r} has no usable member on {pd.Timestamp(date).date()}")
        self.industry = industry
        self.date = date


class OverlappingMembership(PanelError):
    def __init__(self, firm: str):
        super().__init__(f"firm {firm!r} has overlapping membership intervals")
        self.firm = firm


@dataclass(frozen=True)
class MembershipInterval:
    firm_id: str
    industry_id: str
    start: pd.Timestamp
    end: pd.Timestamp

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", pd.Timestamp(self.start))
        object.__setattr__(self, "end", pd.Timestamp(self.end))
        if self.start > self.end:
            raise PanelError(f"{self.firm_id}: membership starts after it ends")


@dataclass(frozen=True)
class IndustryPanel:
    """Aligned T x N matrix of industry uncertainty levels."""

    dates: pd.DatetimeIndex
    industries: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "dates", pd.DatetimeIndex(self.dates))
        object.__setattr__(self, "industries", tuple(self.industries))
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.dates), len(self.industries)):
            raise PanelError(f"values shape {values.shape} does not match dates x industries")
        if not self.dates.is_monotonic_increasing or not self.dates.is_unique:
            raise PanelError("panel dates must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise PanelError("panel values must be finite and positive")
        values.setflags(write=False)

    @property
    def T(self) -> int:
        return len(self.dates)

    @property
    def N(self) -> int:
        return len(self.industries)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.dates.rename("date"), columns=list(self.industries))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "IndustryPanel":
        return cls(pd.DatetimeIndex(frame.index), tuple(str(c) for c in frame.columns), frame.to_numpy(float))

    def select(self, industries: Sequence[str]) -> "IndustryPanel":
        idx = [self.industries.index(s) for s in industries]
        return IndustryPanel(self.dates, tuple(industries), self.values[:, idx])


def cap_weights(caps: Mapping[str, float]) -> dict[str, float]:
    """Market-cap weights of the firms in one industry on one date."""
    if not caps:
        raise EmptyIndustryDay("no member firm has a market cap")
    if any(not c > 0 for c in caps.values()):
        raise PanelError("market caps must be positive")
    total = sum(caps.values())
    return {f: c / total for f, c in caps.items()}


def aggregate_industry(firm_vix: Mapping[str, float], weights: Mapping[str, float]) -> float:
    """Weighted average of firm VIX levels."""
    if firm_vix.keys() != weights.keys():
        raise MismatchedFirms(f"vix firms {sorted(firm_vix)} != weight firms {sorted(weights)}")
    return float(sum(weights[f] * firm_vix[f] for f in sorted(weights)))


def check_membership(intervals: Iterable[MembershipInterval]) -> list[MembershipInterval]:
    intervals = sorted(intervals, key=lambda m: (m.firm_id, m.start, m.end, m.industry_id))
    for a, b in zip(intervals, intervals[1:]):
        if a.firm_id == b.firm_id and b.start <= a.end:
            raise OverlappingMembership(a.firm_id)
    return intervals


def build_panel(
    firm_vix: pd.DataFrame,
    caps: pd.DataFrame,
    membership: Iterable[MembershipInterval],
    fill_limit: int = 5,
    gap_policy: str = "raise",
    calendar: pd.DatetimeIndex | None = None,
) -> IndustryPanel:
    """Assemble the industry panel.

    Parameters
    ----------
    firm_vix : DataFrame
        Long table with columns ``firm_id, date, vix``.
    caps : DataFrame
        Long table with columns ``firm_id, date, market_cap``.
    membership : iterable of MembershipInterval
        Inclusive firm-to-industry intervals.
    fill_limit : int
        Maximum number of trading days a firm's VIX or cap is carried forward.
    gap_policy : {"raise", "drop"}
        What to do when an industry has no usable member on an interior date.
        Leading and trailing dates on which some industry is not yet (or no
        longer) computable are always trimmed.
    calendar : DatetimeIndex, optional
        Trading days; defaults to the union of firm-VIX dates.

    Returns
    -------
    IndustryPanel
        Industries in sorted order.
    """
    if gap_policy not in ("raise", "drop"):
        raise ValueError(f"unknown gap policy {gap_policy!r}")
    intervals = check_membership(membership)
    if not intervals:
        raise PanelError("no membership intervals")

    vix_wide = _wide(firm_vix, "vix")
    cap_wide = _wide(caps, "market_cap")
    calendar = vix_wide.index if calendar is None else pd.DatetimeIndex(calendar).sort_values().unique()
    firms = sorted({m.firm_id for m in intervals})
    vix_wide = vix_wide.reindex(index=calendar, columns=firms).ffill(limit=fill_limit)
    cap_wide = cap_wide.reindex(index=calendar.union(cap_wide.index), columns=firms).ffill(limit=fill_limit)
    cap_wide = cap_wide.reindex(calendar)

    industries = sorted({m.industry_id for m in intervals})
    vix_arr = vix_wide.to_numpy()
    cap_arr = cap_wide.to_numpy()
    out = np.full((len(calendar), len(industries)), np.nan)
    for j, ind in enumerate(industries):
        active = np.zeros((len(calendar), len(firms)), dtype=bool)
        for m in intervals:
            if m.industry_id == ind:
                active[:, firms.index(m.firm_id)] |= (calendar >= m.start) & (calendar <= m.end)
        usable = active & np.isfinite(vix_arr) & np.isfinite(cap_arr) & (cap_arr > 0)
        w = np.where(usable, cap_arr, 0.0)
        tot = w.sum(axis=1)
        ok = tot > 0
        out[ok, j] = (w[ok] * np.where(usable[ok], vix_arr[ok], 0.0)).sum(axis=1) / tot[ok]

    computable = np.all(np.isfinite(out), axis=1)
    if not computable.any():
        raise PanelError("no date on which every industry is computable")
    first = int(np.argmax(computable))
    last = len(computable) - 1 - int(np.argmax(computable[::-1]))
    keep = np.zeros_like(computable)
    keep[first : last + 1] = True
    holes = keep & ~computable
    if holes.any():
        if gap_policy == "raise":
            i = int(np.argmax(holes))
            j = int(np.argmax(~np.isfinite(out[i])))
            raise UnfillableGap(industries[j], calendar[i])
        log.warning("dropping %d interior dates with an unfillable industry gap", int(holes.sum()))
        keep &= computable
    return IndustryPanel(calendar[keep], tuple(industries), out[keep])


def _wide(long: pd.DataFrame, value: str) -> pd.DataFrame:
    frame = long.assign(date=pd.to_datetime(long["date"]), firm_id=long["firm_id"].astype(str))
    dup = frame.duplicated(["date", "firm_id"], keep=False)
    if dup.any():
        raise PanelError(f"duplicate ({value}) rows for {frame.loc[dup, ['firm_id', 'date']].iloc[0].tolist()}")
    wide = frame.pivot(index="date", columns="firm_id", values=value).sort_index()
    return wide.sort_index(axis=1)
