"""Quasi-Bayesian local-likelihood (QBLL) estimation of a time-varying VAR.

At every target date ``k`` the VAR(p) likelihood is reweighted with a
Gaussian kernel centred on ``k`` and combined with a conjugate
Normal-Wishart prior of Minnesota type, giving an analytic Normal-Wishart
quasi posterior that is sampled directly (no MCMC).

Conventions
-----------
The regressor row for panel position ``t`` is ``[1, x_{t-1}', ..., x_{t-p}']``
so coefficient matrices are ``(K, N)`` with ``K = N p + 1``; column ``i`` holds
equation ``i`` and ``Phi_l[i, j] = B[1 + (l - 1) N + j, i]``.

Time indices are 0-based panel positions; the first estimable one is ``p``.
Sigma is the innovation *covariance*: ``Sigma ~ IW(dof, scale)`` or,
equivalently, the precision is Wishart with inverse scale ``scale``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .parallel import fan_out

log = logging.getLogger(__name__)


class EstimationError(ValueError):
    pass


class DegeneratePanel(EstimationError):
    pass


class SingularDesign(EstimationError):
    pass


class NonPosDefScale(EstimationError):
    pass


@dataclass(frozen=True)
class TvpVarSpec:
    """Estimation settings.

    ``bandwidth`` is in observations; ``None`` means ``ceil(sqrt(T))``.
    ``weight_norm`` selects how kernel weights are scaled: ``"ess"`` makes
    them sum to the kernel's effective sample size, ``"sample"`` to the
    number of regression rows.
    """

    lags: int = 2
    bandwidth: float | None = None
    shrinkage: float = 0.05
    own_lag_mean: float = 0.1
    n_draws: int = 500
    stability_cap: float = 0.999
    seed: int = 0
    weight_norm: str = "ess"

    def __post_init__(self) -> None:
        if self.lags < 1:
            raise ValueError("lags must be at least 1")
        if self.n_draws < 1:
            raise ValueError("n_draws must be at least 1")
        if not 0 < self.stability_cap < 1:
            raise ValueError("stability_cap must lie in (0, 1)")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.shrinkage > 0:
            raise ValueError("shrinkage must be positive")
        if self.weight_norm not in ("ess", "sample"):
            raise ValueError(f"unknown weight normalization {self.weight_norm!r}")

    def bandwidth_for(self, T: int) -> float:
        return float(self.bandwidth) if self.bandwidth is not None else float(math.ceil(math.sqrt(T)))


@dataclass(frozen=True)
class MinnesotaPrior:
    coef_mean: np.ndarray  # (K, N)
    coef_precision: np.ndarray  # (K, K)
    dof: float
    scale: np.ndarray  # (N, N)
    resid_var: np.ndarray  # (N,) AR(p) residual variances

    def coef_prior_variance(self) -> np.ndarray:
        """Implied prior variances of every coefficient, ``(K, N)``, at ``E[Sigma]``."""
        sigma_mean = np.diag(self.scale) / (self.dof - len(self.resid_var) - 1)
        return np.outer(1.0 / np.diag(self.coef_precision), sigma_mean)

    def with_precision_scale(self, c: float) -> "MinnesotaPrior":
        return replace(self, coef_precision=self.coef_precision * c)


@dataclass(frozen=True)
class PosteriorParams:
    coef_mean: np.ndarray  # (K, N)
    coef_precision: np.ndarray  # (K, K)
    dof: float
    scale: np.ndarray  # (N, N)

    def __post_init__(self) -> None:
        n = self.scale.shape[0]
        if not self.dof > n - 1:
            raise EstimationError(f"Wishart dof {self.dof} must exceed N - 1 = {n - 1}")

    @property
    def sigma_mean(self) -> np.ndarray:
        n = self.scale.shape[0]
        return self.scale / (self.dof - n - 1) if self.dof > n + 1 else self.scale / self.dof


@dataclass
class PosteriorDrawSet:
    """Draws at one target date.

    ``coefs`` is ``(D, K, N)``, ``sigma`` is ``(D, N, N)``; ``stable`` flags
    draws whose companion spectral radius is below the cap.
    """

    index: int
    lags: int
    coefs: np.ndarray
    sigma: np.ndarray
    stable: np.ndarray
    rejection_rate: float = 0.0

    @property
    def n_draws(self) -> int:
        return self.coefs.shape[0]

    @property
    def phi(self) -> np.ndarray:
        """Lag matrices, ``(D, p, N, N)``."""
        return coefs_to_phi(self.coefs, self.lags)

    @property
    def intercept(self) -> np.ndarray:
        return self.coefs[:, 0, :]


@dataclass
class PathEstimate:
    """Per-index draw sets plus the indices that failed, with their errors."""

    draws: dict[int, PosteriorDrawSet] = field(default_factory=dict)
    errors: dict[int, Exception] = field(default_factory=dict)


def coefs_to_phi(coefs: np.ndarray, p: int) -> np.ndarray:
    """``(..., K, N)`` stacked coefficients to ``(..., p, N, N)`` lag matrices."""
    n = coefs.shape[-1]
    lagged = coefs[..., 1:, :].reshape(coefs.shape[:-2] + (p, n, n))
    return np.swapaxes(lagged, -1, -2)


def phi_to_coefs(phi: np.ndarray, intercept: np.ndarray | None = None) -> np.ndarray:
    p, n, _ = phi.shape
    c = np.zeros(n) if intercept is None else intercept
    return np.vstack([c[None, :], np.swapaxes(phi, -1, -2).reshape(p * n, n)])


def design(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressor matrix ``A`` (intercept + p lags) and targets ``Y`` for rows ``t = p..T-1``."""
    values = np.asarray(values, dtype=float)
    T, n = values.shape
    if T <= p:
        raise DegeneratePanel(f"{T} observations cannot support {p} lags")
    A = np.ones((T - p, n * p + 1))
    for l in range(1, p + 1):
        A[:, 1 + (l - 1) * n : 1 + l * n] = values[p - l : T - l]
    return A, values[p:]


def kernel_weights(T: int, k: int, bandwidth: float, norm: str = "sample") -> np.ndarray:
    """Gaussian kernel weights over ``t = 0..T-1`` centred on ``k``.

    ``norm="sample"`` rescales the weights to sum to ``T``; ``norm="ess"``
    rescales them to sum to the effective sample size
    ``(sum w)**2 / sum w**2``. Both equal ``T`` for a flat kernel.
    """
    if not 0 <= k < T:
        raise ValueError(f"target index {k} outside 0..{T - 1}")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if math.isinf(bandwidth):
        return np.ones(T)
    z = (k - np.arange(T)) / bandwidth
    w = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    total = w.sum()
    if norm == "sample":
        return w * (T / total)
    if norm == "ess":
        return w * (total / np.dot(w, w))
    raise ValueError(f"unknown normalization {norm!r}")


def ar_residual_variances(values: np.ndarray, p: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    T, n = values.shape
    out = np.empty(n)
    for i in range(n):
        A, y = design(values[:, [i]], p)
        beta, *_ = np.linalg.lstsq(A, y[:, 0], rcond=None)
        resid = y[:, 0] - A @ beta
        dof = max(len(y) - A.shape[1], 1)
        out[i] = resid @ resid / dof
        scale = np.mean(values[:, i] ** 2)
        if not out[i] > 1e-14 * max(scale, 1e-300):
            raise DegeneratePanel(f"series {i} has zero AR({p}) residual variance")
    return out


def minnesota_prior(values: np.ndarray, spec: TvpVarSpec) -> MinnesotaPrior:
    """Conjugate Minnesota Normal-Wishart prior.

    Coefficient ``(lag l, variable j)`` in equation ``i`` has prior variance
    ``shrinkage * s_i^2 / (l^2 s_j^2)`` (``shrinkage / l^2`` on own lags) and
    intercepts ``100 s_i^2``; these come from a shared precision matrix scaled
    by ``E[Sigma] = diag(s^2)``. The prior mean is zero except the own first
    lag, which is ``own_lag_mean``.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[1]
    p = spec.lags
    s2 = ar_residual_variances(values, p)
    K = n * p + 1
    prec = np.empty(K)
    prec[0] = 1.0 / 100.0
    for l in range(1, p + 1):
        prec[1 + (l - 1) * n : 1 + l * n] = l**2 * s2 / spec.shrinkage
    mean = np.zeros((K, n))
    mean[1 : 1 + n, :] = spec.own_lag_mean * np.eye(n)
    dof = n + 2.0
    scale = np.diag(s2) * (dof - n - 1)
    return MinnesotaPrior(mean, np.diag(prec), dof, scale, s2)


def _cholesky_with_jitter(m: np.ndarray, what: str) -> np.ndarray:
    m = 0.5 * (m + m.T)
    try:
        return linalg.cholesky(m, lower=True)
    except linalg.LinAlgError:
        jitter = 1e-10 * np.trace(m) * np.eye(len(m))
        try:
            return linalg.cholesky(m + jitter, lower=True)
        except linalg.LinAlgError as exc:
            raise NonPosDefScale(f"{what} is not positive definite") from exc


def posterior_update(A: np.ndarray, Y: np.ndarray, weights: np.ndarray, prior: MinnesotaPrior) -> PosteriorParams:
    """Conjugate update of the Normal-Wishart prior with the kernel-weighted likelihood."""
    Aw = A * weights[:, None]
    prec = prior.coef_precision + A.T @ Aw
    prec = 0.5 * (prec + prec.T)
    try:
        cho = linalg.cho_factor(prec, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularDesign("weighted design is singular") from exc
    mean = linalg.cho_solve(cho, Aw.T @ Y + prior.coef_precision @ prior.coef_mean)
    resid = Y - A @ mean
    dev = mean - prior.coef_mean
    scale = prior.scale + resid.T @ (resid * weights[:, None]) + dev.T @ prior.coef_precision @ dev
    scale = 0.5 * (scale + scale.T)
    chol = _cholesky_with_jitter(scale, "posterior Wishart scale")
    scale = chol @ chol.T
    return PosteriorParams(mean, prec, prior.dof + float(weights.sum()), scale)


def spectral_radius(phi: np.ndarray) -> np.ndarray:
    """Companion-matrix spectral radius for ``(..., p, N, N)`` lag matrices."""
    *batch, p, n, _ = phi.shape
    comp = np.zeros((*batch, n * p, n * p))
    comp[..., :n, :] = np.concatenate([phi[..., l, :, :] for l in range(p)], axis=-1)
    if p > 1:
        comp[..., n:, :-n] = np.eye(n * (p - 1))
    return np.max(np.abs(np.linalg.eigvals(comp)), axis=-1)


def _draw_batch(params: PosteriorParams, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    K, n = params.coef_mean.shape
    l_scale = linalg.cholesky(params.scale, lower=True)
    l_prec = linalg.cholesky(params.coef_precision, lower=True)
    # Bartlett factor of a Wishart(dof, I) matrix
    bart = np.zeros((m, n, n))
    dfs = params.dof - np.arange(n)
    bart[:, np.arange(n), np.arange(n)] = np.sqrt(rng.chisquare(dfs, size=(m, n)))
    rows, cols = np.tril_indices(n, -1)
    bart[:, rows, cols] = rng.standard_normal((m, len(rows)))
    # Sigma = L_scale (B B')^{-1} L_scale' has root R = L_scale B^{-T}
    root = l_scale @ np.swapaxes(np.linalg.inv(bart), -1, -2)
    sigma = root @ np.swapaxes(root, -1, -2)
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    z = rng.standard_normal((m, K, n))
    # vec(B) ~ N(vec(mean), Sigma kron precision^{-1})
    left = linalg.solve_triangular(l_prec, z.transpose(1, 0, 2).reshape(K, m * n), lower=True, trans="T")
    left = left.reshape(K, m, n).transpose(1, 0, 2)
    coefs = params.coef_mean + left @ np.swapaxes(root, -1, -2)
    return coefs, sigma


def sample_posterior(
    params: PosteriorParams,
    spec: TvpVarSpec,
    rng: np.random.Generator,
    index: int = -1,
) -> PosteriorDrawSet:
    """Draw ``spec.n_draws`` (Sigma, coefficients) pairs, rejecting explosive draws.

    Unstable draws are redrawn up to ``10 * n_draws`` attempts in total; if
    that budget runs out the shortfall is filled with unstable draws, which
    keep ``stable=False``.
    """
    n_target = spec.n_draws
    budget = 10 * n_target
    p = spec.lags
    good_c, good_s, bad_c, bad_s = [], [], [], []
    n_good = attempts = 0
    while n_good < n_target and attempts < budget:
        m = min(n_target - n_good, budget - attempts)
        coefs, sigma = _draw_batch(params, m, rng)
        attempts += m
        ok = spectral_radius(coefs_to_phi(coefs, p)) < spec.stability_cap
        good_c.append(coefs[ok])
        good_s.append(sigma[ok])
        n_good += int(ok.sum())
        if len(bad_c) == 0 or sum(len(b) for b in bad_c) < n_target:
            bad_c.append(coefs[~ok])
            bad_s.append(sigma[~ok])
    coefs = np.concatenate(good_c)
    sigma = np.concatenate(good_s)
    stable = np.ones(len(coefs), dtype=bool)
    short = n_target - len(coefs)
    if short > 0:
        log.warning("index %d: only %d of %d draws stable after %d attempts", index, len(coefs), n_target, attempts)
        coefs = np.concatenate([coefs, np.concatenate(bad_c)[:short]])
        sigma = np.concatenate([sigma, np.concatenate(bad_s)[:short]])
        stable = np.concatenate([stable, np.zeros(short, dtype=bool)])
    rejected = attempts - n_good
    return PosteriorDrawSet(index, p, coefs, sigma, stable, rejected / attempts)


def index_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for one target date; depends only on ``(seed, index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


class LocalEstimator:
    """Shared state for estimating many target dates of one panel."""

    def __init__(self, values: np.ndarray, spec: TvpVarSpec, prior: MinnesotaPrior | None = None):
        self.values = np.asarray(values, dtype=float)
        self.spec = spec
        self.T, self.N = self.values.shape
        self.A, self.Y = design(self.values, spec.lags)
        self.prior = prior if prior is not None else minnesota_prior(self.values, spec)
        self.bandwidth = spec.bandwidth_for(self.T)

    def weights(self, index: int) -> np.ndarray:
        p = self.spec.lags
        if not p <= index < self.T:
            raise ValueError(f"time index {index} outside {p}..{self.T - 1}")
        return kernel_weights(self.T - p, index - p, self.bandwidth, self.spec.weight_norm)

    def params(self, index: int) -> PosteriorParams:
        return posterior_update(self.A, self.Y, self.weights(index), self.prior)

    def draws(self, index: int) -> PosteriorDrawSet:
        return sample_posterior(self.params(index), self.spec, index_rng(self.spec.seed, index), index)


def _estimate_chunk(indices: list[int], values: np.ndarray, spec: TvpVarSpec, prior: MinnesotaPrior | None):
    est = LocalEstimator(values, spec, prior)
    out = []
    for k in indices:
        try:
            out.append(est.draws(k))
        except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
            out.append(exc)
    return out


def default_indices(T: int, spec: TvpVarSpec) -> list[int]:
    return list(range(spec.lags, T))


def estimate_path(
    values: np.ndarray,
    spec: TvpVarSpec,
    time_indices: Iterable[int] | None = None,
    workers: int = 1,
    prior: MinnesotaPrior | None = None,
) -> PathEstimate:
    """Estimate every requested date independently.

    Seeds are derived from ``(spec.seed, index)`` so the draws do not depend on
    the order of ``time_indices`` or on ``workers``. Failures at one index are
    collected in ``errors`` without stopping the others.
    """
    values = np.asarray(values, dtype=float)
    if prior is None:
        prior = minnesota_prior(values, spec)
    indices = sorted(set(default_indices(len(values), spec) if time_indices is None else time_indices))
    results = fan_out(_estimate_chunk, indices, workers, values, spec, prior)
    out = PathEstimate()
    for k, res in zip(indices, results):
        if isinstance(res, Exception):
            out.errors[k] = res
        else:
            out.draws[k] = res
    return out


def draws_to_frame(draws: PosteriorDrawSet, labels: Sequence[str]):
    """Flat table of one date's draws: coefficients, upper-triangle Sigma and the stable flag."""
    import pandas as pd

    n = len(labels)
    regs = ["const"] + [f"L{l}.{lab}" for l in range(1, draws.lags + 1) for lab in labels]
    data = {"draw_id": np.arange(draws.n_draws)}
    for i, eq in enumerate(labels):
        for r, reg in enumerate(regs):
            data[f"{eq}~{reg}"] = draws.coefs[:, r, i]
    for i in range(n):
        for j in range(i, n):
            data[f"sigma.{labels[i]}.{labels[j]}"] = draws.sigma[:, i, j]
    data["stable"] = draws.stable.astype(int)
    return pd.DataFrame(data)


def draws_from_frame(frame, labels: Sequence[str], lags: int, index: int = -1) -> PosteriorDrawSet:
    n = len(labels)
    regs = ["const"] + [f"L{l}.{lab}" for l in range(1, lags + 1) for lab in labels]
    D = len(frame)
    coefs = np.empty((D, len(regs), n))
    for i, eq in enumerate(labels):
        for r, reg in enumerate(regs):
            coefs[:, r, i] = frame[f"{eq}~{reg}"].to_numpy(float)
    sigma = np.empty((D, n, n))
    for i in range(n):
        for j in range(i, n):
            sigma[:, i, j] = sigma[:, j, i] = frame[f"sigma.{labels[i]}.{labels[j]}"].to_numpy(float)
    return PosteriorDrawSet(index, lags, coefs, sigma, frame["stable"].to_numpy().astype(bool))
