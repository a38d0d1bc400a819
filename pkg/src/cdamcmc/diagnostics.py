"""Autocorrelation, effective sample size and posterior summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .mcmc import Trace

MIN_ESS_LENGTH = 100


def _centered(series) -> np.ndarray:
    x = np.asarray(series, dtype=float).ravel()
    x = x - x.mean()
    if not np.any(x):
        raise ParameterError("series is constant; autocorrelation undefined")
    return x


def acf(series, max_lag: int = 100) -> np.ndarray:
    """Autocorrelations at lags 0..max_lag, normalised by the lag-0 sum
    (the biased estimator), computed by direct summation."""
    x = _centered(series)
    if x.size <= max_lag:
        raise ParameterError(f"series length {x.size} must exceed max_lag {max_lag}")
    denom = x @ x
    return np.array([x[: x.size - k] @ x[k:] / denom for k in range(max_lag + 1)])


def _acf_full(x) -> np.ndarray:
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac / ac[0]


def ess(series) -> float:
    """N / (1 + 2 sum rho_k), with the sum cut by Geyer's initial positive
    sequence: pairs rho_2m + rho_2m+1 are added while they stay positive."""
    x = _centered(series)
    n = x.size
    if n < MIN_ESS_LENGTH:
        raise ParameterError(f"ESS needs at least {MIN_ESS_LENGTH} draws, got {n}")
    rho = _acf_full(x)
    total = 0.0
    for m in range(n // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        total += pair
    iact = 2.0 * total - 1.0
    return float(np.clip(n / iact, 1.0, n)) if iact > 0 else float(n)


def fmi_estimate(theta_samples, cond_var):
    """Fraction of missing information per coordinate,
    1 - mean conditional variance / marginal variance.

    Returns ``(clipped, unclipped)``; the clipped values lie in [0, 1].
    """
    theta = np.atleast_2d(np.asarray(theta_samples, dtype=float))
    cv = np.atleast_2d(np.asarray(cond_var, dtype=float))
    if theta.shape != cv.shape:
        raise ParameterError(f"shape mismatch {theta.shape} vs {cv.shape}")
    marginal = theta.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = 1.0 - np.nanmean(cv, axis=0) / marginal
    return np.clip(raw, 0.0, 1.0), raw


@dataclass
class ChainSummary:
    """Per-coordinate posterior summaries plus mixing statistics.

    ``sec_per_ess`` divides the wall time by the median per-coordinate ESS.
    """

    coord_names: list
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    ess: np.ndarray
    ess_per_iter: np.ndarray
    ess_min: float
    ess_median: float
    ess_max: float
    sec_per_ess: float
    acceptance: float
    n_samples: int

    @property
    def teff_over_t(self) -> float:
        return float(np.median(self.ess_per_iter))


def _safe_ess(col) -> float:
    try:
        return ess(col)
    except ParameterError:
        # a chain that never moved carries one draw's worth of information
        return 1.0


def summarize(trace: Trace, wall_time: float | None = None, coords=None) -> ChainSummary:
    """Summaries over the recorded draws; ``coords`` restricts the columns."""
    theta = trace.theta_samples
    if theta.shape[0] == 0:
        raise ParameterError("empty trace")
    idx = np.arange(theta.shape[1]) if coords is None else np.asarray(coords)
    theta = theta[:, idx]
    wall = trace.wall_time if wall_time is None else float(wall_time)
    ess_vals = np.array([_safe_ess(theta[:, j]) for j in range(theta.shape[1])])
    q = np.quantile(theta, [0.025, 0.975], axis=0)
    med = float(np.median(ess_vals))
    return ChainSummary(
        coord_names=[trace.coord_names[j] for j in idx],
        mean=theta.mean(axis=0),
        sd=theta.std(axis=0, ddof=1) if theta.shape[0] > 1 else np.zeros(theta.shape[1]),
        q025=q[0],
        q975=q[1],
        ess=ess_vals,
        ess_per_iter=ess_vals / theta.shape[0],
        ess_min=float(ess_vals.min()),
        ess_median=med,
        ess_max=float(ess_vals.max()),
        sec_per_ess=wall / med,
        acceptance=trace.accept_rate_frozen,
        n_samples=theta.shape[0],
    )


def mc_standard_error(series) -> float:
    """Posterior-mean Monte Carlo error, sd / sqrt(ESS)."""
    x = np.asarray(series, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(_safe_ess(x)))
