"""CSV ingestion with row-level validation, and atomic output writers."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .industry_panel import IndustryPanel, MembershipInterval
from .network import NODE_STATS, SUMMARIES, ConnectednessSeries
from .options_iv import OptionChain, OptionQuote, OptionsError

log = logging.getLogger(__name__)

Parser = Callable[[str], object]

CHAIN_COLUMNS = ("quote_date", "expiry_date", "firm_id", "spot", "rate", "strike", "kind", "bid", "ask")


class InputError(ValueError):
    pass


class EmptyInput(InputError):
    pass


@dataclass(frozen=True)
class RowIssue:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


class MalformedInput(InputError):
    def __init__(self, path, issues: Sequence[RowIssue]):
        self.issues = list(issues)
        head = "; ".join(str(i) for i in self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        super().__init__(f"{path}: {head}{more}")


def parse_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite number {text!r}")
    return v


def parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def parse_str(text: str) -> str:
    s = text.strip()
    if not s:
        raise ValueError("empty field")
    return s


def parse_optional_date(text: str) -> date | None:
    return parse_date(text) if text.strip() else None


def read_table(
    path,
    columns: Mapping[str, Parser],
    extra: Parser | None = None,
    strict: bool = False,
    with_lines: bool = False,
) -> tuple[pd.DataFrame, list[RowIssue]]:
    """Parse a headed CSV row by row.

    Parameters
    ----------
    path : path-like
    columns : mapping
        Required column names and their field parsers.
    extra : callable, optional
        Parser for any further columns; without it extra columns are ignored.
    strict : bool
        Raise on the first malformed row instead of skipping it.
    with_lines : bool
        Add a ``line`` column with each row's line number.

    Returns
    -------
    frame, issues
        Parsed rows in file order and the skipped rows with their line numbers.

    Raises
    ------
    EmptyInput
        No header or no data rows.
    MalformedInput
        Missing required columns, or any bad row when ``strict``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyInput(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise MalformedInput(path, [RowIssue(1, f"missing column(s) {missing}")])
        if len(set(header)) != len(header):
            raise MalformedInput(path, [RowIssue(1, "duplicate column names")])
        names = [h for h in header if h in columns or extra is not None]
        parsers = {h: columns.get(h, extra) for h in names}
        pos = {h: header.index(h) for h in names}
        rows, issues = [], []
        for fields in reader:
            if not fields or all(not f.strip() for f in fields):
                continue
            line = reader.line_num
            if len(fields) != len(header):
                issue = RowIssue(line, f"expected {len(header)} fields, got {len(fields)}")
            else:
                try:
                    rows.append([parsers[h](fields[pos[h]]) for h in names] + [line] * with_lines)
                    continue
                except (ValueError, TypeError) as exc:
                    issue = RowIssue(line, str(exc))
            if strict:
                raise MalformedInput(path, [issue])
            issues.append(issue)
    for issue in issues:
        log.warning("%s: skipped %s", path, issue)
    if not rows:
        if issues:
            raise MalformedInput(path, issues)
        raise EmptyInput(f"{path}: no data rows")
    return pd.DataFrame(rows, columns=names + ["line"] * with_lines), issues


def _checked_field(name: str, parser: Parser) -> Parser:
    def parse(text: str):
        try:
            return parser(text)
        except ValueError as exc:
            raise ValueError(f"column {name}: {exc}") from None

    return parse


def _spec(**columns: Parser) -> dict[str, Parser]:
    return {k: _checked_field(k, v) for k, v in columns.items()}


def read_chains(path, strict: bool = False) -> tuple[dict[tuple[str, date], list[OptionChain]], list[RowIssue]]:
    """Option quotes grouped into chains, keyed by ``(firm_id, quote_date)``.

    A quote that fails validation (crossed, negative bid) is a malformed row.
    Spot and rate are taken from the first row of each chain; rows that
    disagree are malformed too.
    """
    frame, issues = read_table(
        path,
        _spec(
            quote_date=parse_date,
            expiry_date=parse_date,
            firm_id=parse_str,
            spot=parse_float,
            rate=parse_float,
            strike=parse_float,
            kind=parse_str,
            bid=parse_float,
            ask=parse_float,
        ),
        strict=strict,
        with_lines=True,
    )
    lines = frame.pop("line")
    groups: dict[tuple, list[OptionQuote]] = defaultdict(list)
    market: dict[tuple, tuple[float, float]] = {}
    extra: list[RowIssue] = []
    for line, row in zip(lines, frame.itertuples(index=False)):
        key = (row.firm_id, row.quote_date, row.expiry_date)
        try:
            if market.setdefault(key, (row.spot, row.rate)) != (row.spot, row.rate):
                raise OptionsError("spot or rate differs from the chain's first row")
            groups[key].append(OptionQuote(row.strike, row.bid, row.ask, row.kind))
        except OptionsError as exc:
            issue = RowIssue(line, str(exc))
            if strict:
                raise MalformedInput(path, [issue]) from None
            log.warning("%s: skipped %s", path, issue)
            extra.append(issue)
    out: dict[tuple[str, date], list[OptionChain]] = defaultdict(list)
    bad_chains = []
    for (firm, qd, ed), quotes in sorted(groups.items()):
        spot, rate = market[(firm, qd, ed)]
        try:
            out[(firm, qd)].append(OptionChain(firm, qd, ed, spot, rate, tuple(quotes)))
        except OptionsError as exc:
            bad_chains.append(RowIssue(0, f"{firm} {qd} {ed}: {exc}"))
    if strict and bad_chains:
        raise MalformedInput(path, bad_chains)
    return dict(out), issues + extra + bad_chains


def read_firm_vix(path, strict: bool = False) -> tuple[pd.DataFrame, list[RowIssue]]:
    return read_table(path, _spec(firm_id=parse_str, date=parse_date, vix=parse_float), strict=strict)


def read_caps(path, strict: bool = False) -> tuple[pd.DataFrame, list[RowIssue]]:
    return read_table(path, _spec(firm_id=parse_str, date=parse_date, market_cap=parse_float), strict=strict)


def read_membership(path, strict: bool = False) -> tuple[list[MembershipInterval], list[RowIssue]]:
    frame, issues = read_table(
        path, _spec(firm_id=parse_str, industry_id=parse_str, start=parse_date, end=parse_date), strict=strict
    )
    return [MembershipInterval(r.firm_id, r.industry_id, r.start, r.end) for r in frame.itertuples(index=False)], issues


def read_macro(path, strict: bool = False) -> tuple[pd.DataFrame, list[RowIssue]]:
    def period(text: str) -> str:
        return str(pd.Period(text.strip()))

    return read_table(path, _spec(id=parse_str, period=period, value=parse_float), strict=strict)


def read_panel(path, strict: bool = True) -> IndustryPanel:
    frame, _ = read_table(path, _spec(date=parse_date), extra=parse_float, strict=strict)
    frame = frame.set_index(pd.DatetimeIndex(frame.pop("date"), name="date"))
    return IndustryPanel.from_frame(frame)


def read_frame(path) -> pd.DataFrame:
    """Any table this package writes, with exact float round trip."""
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])


def read_connectedness(path) -> ConnectednessSeries:
    """Series from the export layout; node summaries other than the median are NaN."""
    frame = read_frame(path)
    dates = pd.DatetimeIndex(frame.pop("date"))
    total = np.column_stack([frame[f"C_{s}"].to_numpy(float) for s in SUMMARIES])
    labels = [c[len("NET_") :] for c in frame.columns if c.startswith("NET_")]
    T, N = len(dates), len(labels)
    nodes = {}
    for name in NODE_STATS:
        arr = np.full((T, N, len(SUMMARIES)), np.nan)
        arr[:, :, 0] = frame[[f"{name.upper()}_{lab}" for lab in labels]].to_numpy(float)
        nodes[name] = arr
    return ConnectednessSeries(dates, tuple(labels), total, nodes, np.full((T, N, N), np.nan), np.zeros(T, int))


def format_frame(frame: pd.DataFrame, index: bool = True) -> str:
    """Canonical CSV text: ISO dates, shortest round-trip floats, ``\\n`` line ends."""
    out = frame.copy()
    if isinstance(out.index, pd.DatetimeIndex):
        out.index = out.index.strftime("%Y-%m-%d").rename(frame.index.name)
    for col in out.columns:
        if pd.api.types.is_datetime64_any_dtype(out[col]):
            out[col] = out[col].dt.strftime("%Y-%m-%d")
    buf = io.StringIO()
    out.to_csv(buf, index=index, lineterminator="\n")
    return buf.getvalue()


def atomic_write_text(path, text: str) -> Path:
    """Write via a temporary file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        # mkstemp creates 0600; give the file the permissions a plain open() would
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def write_frame(path, frame: pd.DataFrame, index: bool = True) -> Path:
    return atomic_write_text(path, format_frame(frame, index))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
