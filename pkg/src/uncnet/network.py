"""Generalized variance decompositions and connectedness statistics.

All transforms broadcast over leading axes, so one call handles every
posterior draw at a date (or every date of a series) at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .tvp_var import (
    LocalEstimator,
    MinnesotaPrior,
    PathEstimate,
    PosteriorDrawSet,
    SingularDesign,
    TvpVarSpec,
    coefs_to_phi,
    default_indices,
    design,
    minnesota_prior,
)
from .parallel import fan_out

log = logging.getLogger(__name__)

NODE_STATS = ("to", "from", "net", "agg")
SUMMARIES = ("median", "mean", "sd", "p2.5", "p97.5")


class NetworkError(ValueError):
    pass


class ZeroDenominator(NetworkError):
    pass


class ZeroRow(NetworkError):
    pass


def vma_coefficients(phi: np.ndarray, H: int) -> np.ndarray:
    """Moving-average coefficients ``Psi_0..Psi_H`` of a VAR with lag matrices ``phi``.

    Parameters
    ----------
    phi : ndarray, shape (..., p, N, N)
    H : int
        Last horizon, at least 1.

    Returns
    -------
    ndarray, shape (..., H + 1, N, N)
        ``Psi_0 = I`` and ``Psi_h = sum_{i=1}^{min(h, p)} Phi_i Psi_{h-i}``.
    """
    if H < 1:
        raise ValueError("horizon must be at least 1")
    phi = np.asarray(phi, dtype=float)
    *batch, p, n, _ = phi.shape
    psi = np.zeros((*batch, H + 1, n, n))
    psi[..., 0, :, :] = np.eye(n)
    for h in range(1, H + 1):
        acc = psi[..., h, :, :]
        for i in range(1, min(h, p) + 1):
            acc += phi[..., i - 1, :, :] @ psi[..., h - i, :, :]
    return psi


def gfevd(psi: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Unnormalized generalized forecast-error variance decomposition.

    ``theta[j, k] = sigma_kk^{-1} sum_h ([Psi_h Sigma]_{jk})^2 / sum_h [Psi_h Sigma Psi_h']_{jj}``
    with ``h`` running over every supplied horizon.
    """
    psi = np.asarray(psi, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    ps = psi @ sigma[..., None, :, :]
    num = np.sum(ps**2, axis=-3)
    den = np.sum(np.sum(ps * psi, axis=-1), axis=-2)
    sdiag = np.diagonal(sigma, axis1=-2, axis2=-1)
    if np.any(~(sdiag > 0)) or np.any(~(den > 0)):
        raise ZeroDenominator("a shock variance or forecast-error variance is zero")
    return num / sdiag[..., None, :] / den[..., :, None]


def row_normalize(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    rows = theta.sum(axis=-1, keepdims=True)
    if np.any(~(rows > 0)):
        raise ZeroRow("a decomposition row sums to zero")
    return theta / rows


def total_connectedness(adj: np.ndarray) -> np.ndarray:
    """Share of off-diagonal mass in percent."""
    adj = np.asarray(adj, dtype=float)
    total = adj.sum(axis=(-2, -1))
    return 100.0 * (total - np.trace(adj, axis1=-2, axis2=-1)) / total


@dataclass(frozen=True)
class ConnectednessStats:
    """Total and directional connectedness, in percent; arrays may carry leading batch axes."""

    total: np.ndarray
    to: np.ndarray
    from_: np.ndarray
    net: np.ndarray
    agg: np.ndarray

    def node(self, name: str) -> np.ndarray:
        return {"to": self.to, "from": self.from_, "net": self.net, "agg": self.agg}[name]


def directional(adj: np.ndarray) -> ConnectednessStats:
    """TO, FROM, NET and AGG from a row-stochastic adjacency matrix.

    FROM sums a row's off-diagonal entries and TO a column's, both scaled by
    ``100 / N``, so total connectedness equals either sum.
    """
    adj = np.asarray(adj, dtype=float)
    n = adj.shape[-1]
    diag = np.diagonal(adj, axis1=-2, axis2=-1)
    from_ = 100.0 * (adj.sum(axis=-1) - diag) / n
    to = 100.0 * (adj.sum(axis=-2) - diag) / n
    return ConnectednessStats(total_connectedness(adj), to, from_, to - from_, to + from_)


def adjacency(phi: np.ndarray, sigma: np.ndarray, H: int) -> np.ndarray:
    return row_normalize(gfevd(vma_coefficients(phi, H), sigma))


def connectedness(phi: np.ndarray, sigma: np.ndarray, H: int) -> ConnectednessStats:
    return directional(adjacency(phi, sigma, H))


def _summaries(x: np.ndarray) -> np.ndarray:
    # summaries over axis 0 stacked on a new last axis in SUMMARIES order
    sd = x.std(axis=0, ddof=1) if len(x) > 1 else np.zeros(x.shape[1:])
    lo, med, hi = np.percentile(x, [2.5, 50.0, 97.5], axis=0)
    return np.stack([med, x.mean(axis=0), sd, lo, hi], axis=-1)


@dataclass
class DateSummary:
    total: np.ndarray  # (5,)
    nodes: dict[str, np.ndarray]  # name -> (N, 5)
    adjacency: np.ndarray  # (N, N) posterior mean
    n_used: int
    all_draws_used: bool


def summarize_draws(draws: PosteriorDrawSet, H: int) -> DateSummary:
    """Connectedness of every draw at one date, reduced to median, mean, sd and percentiles.

    Unstable draws are dropped when at least half are stable; otherwise all
    draws are kept and a warning is logged.
    """
    keep = draws.stable
    fallback = keep.mean() < 0.5
    if fallback:
        log.warning("index %d: fewer than half of the draws are stable; using all draws", draws.index)
        keep = np.ones_like(keep)
    adj = adjacency(coefs_to_phi(draws.coefs[keep], draws.lags), draws.sigma[keep], H)
    stats = directional(adj)
    return DateSummary(
        _summaries(stats.total),
        {name: _summaries(stats.node(name)) for name in NODE_STATS},
        adj.mean(axis=0),
        int(keep.sum()),
        bool(fallback),
    )


@dataclass
class ConnectednessSeries:
    """Posterior summaries of connectedness on a sequence of dates.

    ``total`` is ``(T, 5)``, each entry of ``nodes`` is ``(T, N, 5)`` and
    ``adjacency`` is ``(T, N, N)``, with the last summary axis in
    ``SUMMARIES`` order.
    """

    dates: pd.Index
    labels: tuple[str, ...]
    total: np.ndarray
    nodes: dict[str, np.ndarray]
    adjacency: np.ndarray
    n_used: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.dates)

    def total_stat(self, summary: str = "median") -> pd.Series:
        return pd.Series(self.total[:, SUMMARIES.index(summary)], index=self.dates, name="C")

    def node_stat(self, name: str, summary: str = "median") -> pd.DataFrame:
        return pd.DataFrame(self.nodes[name][:, :, SUMMARIES.index(summary)], index=self.dates, columns=list(self.labels))

    def to_frame(self) -> pd.DataFrame:
        """Export layout: total summaries, then per-industry medians of every node statistic."""
        data = {f"C_{s}": self.total[:, i] for i, s in enumerate(SUMMARIES)}
        for name in NODE_STATS:
            for j, lab in enumerate(self.labels):
                data[f"{name.upper()}_{lab}"] = self.nodes[name][:, j, 0]
        return pd.DataFrame(data, index=pd.Index(self.dates, name="date"))

    def select(self, mask: np.ndarray) -> "ConnectednessSeries":
        mask = np.asarray(mask, dtype=bool)
        return ConnectednessSeries(
            self.dates[mask],
            self.labels,
            self.total[mask],
            {k: v[mask] for k, v in self.nodes.items()},
            self.adjacency[mask],
            self.n_used[mask],
            list(self.warnings),
        )


def series_from_summaries(dates: Sequence, labels: Sequence[str], summaries: Sequence[DateSummary]) -> ConnectednessSeries:
    if not summaries:
        raise NetworkError("no dates to summarize")
    warnings = [f"{d}: fewer than half of the draws stable, all used" for d, s in zip(dates, summaries) if s.all_draws_used]
    return ConnectednessSeries(
        pd.Index(dates),
        tuple(labels),
        np.array([s.total for s in summaries]),
        {name: np.array([s.nodes[name] for s in summaries]) for name in NODE_STATS},
        np.array([s.adjacency for s in summaries]),
        np.array([s.n_used for s in summaries]),
        warnings,
    )


def network_series(
    path: PathEstimate | Mapping[int, PosteriorDrawSet],
    H: int = 10,
    labels: Sequence[str] | None = None,
    dates: Sequence | None = None,
) -> ConnectednessSeries:
    """Summaries for stored draw sets, in increasing index order.

    ``dates`` maps panel positions to labels; by default the indices are used.
    """
    draws = path.draws if isinstance(path, PathEstimate) else path
    idx = sorted(draws)
    if not idx:
        raise NetworkError("no draw sets")
    n = draws[idx[0]].coefs.shape[-1]
    _require_network(n)
    labels = tuple(labels) if labels is not None else tuple(f"V{i + 1}" for i in range(n))
    keys = [dates[k] for k in idx] if dates is not None else idx
    return series_from_summaries(keys, labels, [summarize_draws(draws[k], H) for k in idx])


def _network_chunk(indices: list[int], values: np.ndarray, spec: TvpVarSpec, prior: MinnesotaPrior, H: int):
    est = LocalEstimator(values, spec, prior)
    out = []
    for k in indices:
        try:
            out.append(summarize_draws(est.draws(k), H))
        except (ValueError, np.linalg.LinAlgError) as exc:
            out.append(exc)
    return out


def network_path(
    values: np.ndarray,
    spec: TvpVarSpec,
    H: int = 10,
    time_indices: Sequence[int] | None = None,
    labels: Sequence[str] | None = None,
    dates: Sequence | None = None,
    workers: int = 1,
    prior: MinnesotaPrior | None = None,
) -> tuple[ConnectednessSeries, dict[int, Exception]]:
    """Estimate and summarize date by date without keeping the draws.

    Gives the same numbers as ``network_series(estimate_path(...))`` while
    holding only one date's draws per worker. Dates whose estimation fails are
    left out of the series and returned in the error map.
    """
    values = np.asarray(values, dtype=float)
    _require_network(values.shape[1])
    if prior is None:
        prior = minnesota_prior(values, spec)
    indices = sorted(set(default_indices(len(values), spec) if time_indices is None else time_indices))
    results = fan_out(_network_chunk, indices, workers, values, spec, prior, H)
    good = [(k, r) for k, r in zip(indices, results) if not isinstance(r, Exception)]
    errors = {k: r for k, r in zip(indices, results) if isinstance(r, Exception)}
    labels = tuple(labels) if labels is not None else tuple(f"V{i + 1}" for i in range(values.shape[1]))
    keys = [dates[k] if dates is not None else k for k, _ in good]
    return series_from_summaries(keys, labels, [r for _, r in good]), errors


def _require_network(n: int) -> None:
    if n < 2:
        raise NetworkError(f"a network needs at least two variables, got {n}")


def fit_var_ols(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares VAR(p) with intercept; returns lag matrices ``(p, N, N)`` and residual covariance."""
    A, Y = design(values, p)
    if np.linalg.matrix_rank(A) < A.shape[1] or len(Y) <= A.shape[1]:
        raise SingularDesign("window regressors are rank deficient")
    B, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = Y - A @ B
    sigma = resid.T @ resid / (len(Y) - A.shape[1])
    return coefs_to_phi(B, p), sigma


def rolling_window_baseline(
    values: np.ndarray,
    window: int,
    H: int = 10,
    lags: int = 2,
    labels: Sequence[str] | None = None,
    dates: Sequence | None = None,
) -> ConnectednessSeries:
    """Constant-coefficient VAR refitted by least squares on a moving window.

    Each point is labelled with the window's last date. Bands collapse to the
    point estimate since there is one fit per window.
    """
    values = np.asarray(values, dtype=float)
    T, n = values.shape
    _require_network(n)
    if window < 10 * n:
        raise ValueError(f"window {window} is shorter than 10 x {n} variables")
    if window > T:
        raise ValueError(f"window {window} exceeds the sample length {T}")
    summaries = []
    for end in range(window, T + 1):
        phi, sigma = fit_var_ols(values[end - window : end], lags)
        adj = adjacency(phi, sigma, H)
        stats = directional(adj[None])
        summaries.append(
            DateSummary(
                _summaries(stats.total),
                {name: _summaries(stats.node(name)) for name in NODE_STATS},
                adj,
                1,
                False,
            )
        )
    ends = range(window - 1, T)
    keys = [dates[e] for e in ends] if dates is not None else list(ends)
    labels = tuple(labels) if labels is not None else tuple(f"V{i + 1}" for i in range(n))
    return series_from_summaries(keys, labels, summaries)


def adjacency_frame(series: ConnectednessSeries, position: int) -> pd.DataFrame:
    """Posterior-mean adjacency at one date; rows receive, columns transmit."""
    return pd.DataFrame(series.adjacency[position], index=list(series.labels), columns=list(series.labels))


def read_series_frame(frame: pd.DataFrame) -> tuple[pd.Series, dict[str, pd.DataFrame]]:
    """Inverse of the export layout: total-C medians and per-statistic median tables."""
    total = frame["C_median"]
    nodes = {}
    for name in NODE_STATS:
        prefix = f"{name.upper()}_"
        cols = [c for c in frame.columns if c.startswith(prefix)]
        nodes[name] = frame[cols].rename(columns=lambda c: c[len(prefix) :])
    return total, nodes
