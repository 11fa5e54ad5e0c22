"""Business-cycle phases, phase-averaged network statistics and hub classification."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .industry_panel import IndustryPanel
from .network import ConnectednessSeries

PHASES = ("inversion", "recession", "expansion")


class CycleError(ValueError):
    pass


class EmptyPhase(CycleError):
    pass


class RuleExceedsUniverse(CycleError):
    pass


class EmptySelection(CycleError):
    pass


@dataclass(frozen=True)
class PhaseInterval:
    start: pd.Timestamp
    end: pd.Timestamp | None  # None: open to the end of the sample
    phase: str


class PhaseCalendar:
    """Dated inversion and recession intervals; every other date is an expansion."""

    def __init__(self, intervals: Sequence[PhaseInterval]):
        ivs = sorted(intervals, key=lambda i: i.start)
        for iv in ivs:
            if iv.phase not in PHASES:
                raise CycleError(f"unknown phase {iv.phase!r}")
            if iv.end is not None and iv.end < iv.start:
                raise CycleError(f"interval starting {iv.start.date()} ends before it starts")
        for a, b in zip(ivs, ivs[1:]):
            if a.end is None or b.start <= a.end:
                raise CycleError(f"phase intervals starting {a.start.date()} and {b.start.date()} overlap")
        self.intervals = tuple(ivs)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "PhaseCalendar":
        out = []
        for row in frame.itertuples(index=False):
            end = None if pd.isna(row.end) or str(row.end).strip() == "" else pd.Timestamp(row.end)
            out.append(PhaseInterval(pd.Timestamp(row.start), end, str(row.phase).strip()))
        return cls(out)

    @classmethod
    def from_csv(cls, path) -> "PhaseCalendar":
        return cls.from_frame(pd.read_csv(path, dtype=str, keep_default_na=False))

    @classmethod
    def default(cls) -> "PhaseCalendar":
        with resources.files("uncnet").joinpath("data/phase_calendar.csv").open() as fh:
            return cls.from_frame(pd.read_csv(fh, dtype=str, keep_default_na=False))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "start": [i.start.date().isoformat() for i in self.intervals],
                "end": ["" if i.end is None else i.end.date().isoformat() for i in self.intervals],
                "phase": [i.phase for i in self.intervals],
            }
        )

    def phase_of(self, dates) -> np.ndarray:
        """Phase label of each date; interval ends are inclusive whole days."""
        dates = pd.DatetimeIndex(pd.to_datetime(dates)).normalize()
        out = np.full(len(dates), "expansion", dtype=object)
        for iv in self.intervals:
            hit = dates >= iv.start
            if iv.end is not None:
                hit &= dates <= iv.end
            out[hit] = iv.phase
        return out


def phase_averages(
    series: ConnectednessSeries,
    calendar: PhaseCalendar,
    phases: Sequence[str] = PHASES,
    skip_empty: bool = False,
    share: str = "ratio",
) -> pd.DataFrame:
    """Mean NET and AGG per industry within each phase and over the whole series.

    Uses the per-date posterior medians. Columns are ``(period, statistic)``
    pairs with statistics ``NET``, ``AGG`` and ``AGG%``. With
    ``share="ratio"`` ``AGG%`` is an industry's share of the period's summed
    mean AGG; ``share="daily"`` averages the daily shares instead.
    """
    if share not in ("ratio", "daily"):
        raise ValueError(f"unknown share method {share!r}")
    labels = calendar.phase_of(series.dates)
    net = series.node_stat("net").to_numpy()
    agg = series.node_stat("agg").to_numpy()
    blocks = {}
    for phase in list(phases) + ["total"]:
        mask = np.ones(len(labels), bool) if phase == "total" else labels == phase
        if not mask.any():
            if skip_empty:
                continue
            raise EmptyPhase(f"no dates fall in the {phase} phase")
        table = period_table(net[mask].mean(axis=0), agg[mask].mean(axis=0), series.labels)
        if share == "daily":
            table["AGG%"] = (100.0 * agg[mask] / agg[mask].sum(axis=1, keepdims=True)).mean(axis=0)
        blocks[phase] = table
    return pd.concat(blocks, axis=1)


def period_table(net: np.ndarray, agg: np.ndarray, labels: Sequence[str]) -> pd.DataFrame:
    agg = np.asarray(agg, dtype=float)
    return pd.DataFrame({"NET": net, "AGG": agg, "AGG%": 100.0 * agg / agg.sum()}, index=pd.Index(labels, name="industry"))


def flatten_columns(table: pd.DataFrame) -> pd.DataFrame:
    """``(period, stat)`` columns to ``period_stat`` names for CSV export."""
    out = table.copy()
    out.columns = [f"{p}_{s}" for p, s in table.columns]
    return out


@dataclass(frozen=True)
class HubRule:
    top_k: int = 5
    bottom_k: int = 4
    metric: str = "AGG"

    @classmethod
    def strict(cls) -> "HubRule":
        return cls(top_k=3, bottom_k=3)


@dataclass(frozen=True)
class HubClassification:
    hubs: frozenset[str]
    non_hubs: frozenset[str]
    middle: frozenset[str]
    rule: HubRule
    ranking: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "rule": asdict(self.rule),
                "ranking": list(self.ranking),
                "hubs": sorted(self.hubs),
                "non_hubs": sorted(self.non_hubs),
                "middle": sorted(self.middle),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "HubClassification":
        d = json.loads(text)
        return cls(frozenset(d["hubs"]), frozenset(d["non_hubs"]), frozenset(d["middle"]), HubRule(**d["rule"]), tuple(d["ranking"]))


def classify_hubs(agg: Mapping[str, float] | pd.Series, rule: HubRule = HubRule()) -> HubClassification:
    """Rank industries by total-period AGG; the top ``top_k`` are hubs and the bottom ``bottom_k`` non-hubs.

    Ties are broken alphabetically, so equal values rank the earlier symbol higher.
    """
    values = dict(agg.items()) if isinstance(agg, pd.Series) else dict(agg)
    if rule.top_k < 0 or rule.bottom_k < 0:
        raise CycleError("rule sizes must be non-negative")
    if rule.top_k + rule.bottom_k > len(values):
        raise RuleExceedsUniverse(f"{rule.top_k} hubs + {rule.bottom_k} non-hubs exceed {len(values)} industries")
    if any(not np.isfinite(v) for v in values.values()):
        raise CycleError("AGG values must be finite")
    ranking = tuple(sorted(values, key=lambda s: (-values[s], s)))
    hubs = frozenset(ranking[: rule.top_k])
    non_hubs = frozenset(ranking[len(ranking) - rule.bottom_k :]) if rule.bottom_k else frozenset()
    middle = frozenset(ranking) - hubs - non_hubs
    return HubClassification(hubs, non_hubs, middle, rule, ranking)


def subnetwork_panel(panel: IndustryPanel, classification: HubClassification, which: str) -> IndustryPanel:
    """Columns of ``panel`` in the chosen group, kept in panel order."""
    groups = {"hubs": classification.hubs, "non_hubs": classification.non_hubs}
    if which not in groups:
        raise ValueError(f"which must be one of {sorted(groups)}")
    chosen = [s for s in panel.industries if s in groups[which]]
    if not chosen:
        raise EmptySelection(f"no {which} among the panel industries")
    return panel.select(chosen)
