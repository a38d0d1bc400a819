"""Datasets and synthetic rare-event generators."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .dist import as_generator
from .errors import NumericalError, ParameterError


@dataclass
class BinaryData:
    """Design matrix and 0/1 responses, shared by the probit and logistic models."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size or self.y.size < 1:
            raise ParameterError("X rows must match y length and n >= 1")
        if not np.all((self.y == 0.0) | (self.y == 1.0)):
            raise ParameterError("binary responses must be 0 or 1")
        if np.linalg.matrix_rank(self.X) < self.X.shape[1]:
            raise NumericalError("design matrix is rank deficient", f"p={self.X.shape[1]}")

    @classmethod
    def intercept_only(cls, y) -> "BinaryData":
        y = np.asarray(y, dtype=float).ravel()
        return cls(np.ones((y.size, 1)), y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class GlmDataset:
    """Generic (X, y, N) triple; ``N`` is the per-row trial count (ones for
    Bernoulli data, unused for Poisson)."""

    X: np.ndarray
    y: np.ndarray
    N: np.ndarray | None = None
    family: str = "logistic"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float).reshape(self.y.size, -1)
        if self.N is not None:
            self.N = np.asarray(self.N, dtype=float).ravel()
            if self.N.shape != self.y.shape or np.any(self.N < 1) or np.any(self.y > self.N):
                raise ParameterError("need N_i >= 1 and y_i <= N_i")
        if np.any(self.y < 0) or np.any(self.y != np.floor(self.y)):
            raise ParameterError("responses must be non-negative integers")

    @property
    def n(self) -> int:
        return self.y.size

    def binary(self) -> BinaryData:
        return BinaryData(self.X, self.y)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.y, self.N if self.N is not None else np.empty(0)):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def to_csv(self, path) -> None:
        N = self.N if self.N is not None else np.ones(self.n)
        cols = np.column_stack([self.y, N, self.X])
        header = ",".join(["y", "N"] + [f"x{j + 1}" for j in range(self.X.shape[1])])
        np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, family: str = "logistic") -> "GlmDataset":
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(arr[:, 2:], arr[:, 0], arr[:, 1], family)


def _mean_fn(family: str):
    if family == "probit":
        return special.ndtr
    if family in ("logistic", "binomial"):
        return special.expit
    if family == "poisson":
        return np.exp
    raise ParameterError(f"unknown family {family!r}")


def solve_intercept(family: str, X_rest, offset_theta, target_sum_y: float, N=None) -> float:
    """Intercept making the expected total count equal ``target_sum_y``,
    found by bracketing root search (the expectation is monotone in it)."""
    mean = _mean_fn(family)
    eta_rest = X_rest @ offset_theta if X_rest.size else np.zeros(len(X_rest))
    weight = 1.0 if N is None else N

    def excess(a):
        return float(np.sum(weight * mean(a + eta_rest))) - target_sum_y

    lo, hi = -50.0, 50.0
    if excess(lo) > 0 or excess(hi) < 0:
        raise ParameterError("target count not reachable by shifting the intercept")
    return optimize.brentq(excess, lo, hi, xtol=1e-12)


def generate_rare_event_data(family: str, n: int, p: int, rng, theta_true=None,
                             target_sum_y: float | None = None, exact_sum_y: int | None = None,
                             covariate_mean: float = 1.0, N=None) -> tuple[GlmDataset, np.ndarray]:
    """Simulate a GLM with an intercept and ``p - 1`` Gaussian covariates.

    Exactly one of ``theta_true`` (full vector, intercept first),
    ``target_sum_y`` (intercept solved so that E[sum y] hits the target;
    covariate effects from ``theta_true[1:]`` or zero) or ``exact_sum_y``
    (intercept-only data with that many ones placed at random) drives the
    outcome. Returns the dataset and the theta used.
    """
    if n < 1 or p < 1:
        raise ParameterError("need n >= 1 and p >= 1")
    gen = as_generator(rng)
    if exact_sum_y is not None:
        if p != 1 or not 0 <= exact_sum_y <= n:
            raise ParameterError("exact-count mode is intercept-only with 0 <= sum y <= n")
        y = np.zeros(n)
        y[gen.choice(n, size=exact_sum_y, replace=False)] = 1.0
        s = exact_sum_y
        theta = np.array([np.log(max(s, 0.5) / (n - min(s, n - 0.5)))])
        return GlmDataset(np.ones((n, 1)), y, None, family), theta
    X = np.column_stack([np.ones(n), gen.normal(covariate_mean, 1.0, size=(n, p - 1))])
    if target_sum_y is not None:
        slopes = np.zeros(p - 1) if theta_true is None else np.asarray(theta_true, dtype=float)[1:]
        a = solve_intercept(family, X[:, 1:], slopes, target_sum_y, N)
        theta = np.concatenate([[a], slopes])
    elif theta_true is not None:
        theta = np.asarray(theta_true, dtype=float)
        if theta.size != p:
            raise ParameterError("theta_true must have length p")
    else:
        raise ParameterError("give theta_true, target_sum_y or exact_sum_y")
    mu = _mean_fn(family)(X @ theta)
    if family == "poisson":
        y = gen.poisson(mu).astype(float)
    elif N is not None:
        y = gen.binomial(np.asarray(N, dtype=np.int64), mu).astype(float)
    else:
        y = (gen.random(n) < mu).astype(float)
    return GlmDataset(X, y, None if N is None else np.asarray(N, dtype=float), family), theta


def glm_start(X, y, family: str, N=None, max_iter: int = 50) -> np.ndarray:
    """Maximum-likelihood starting point by Newton iterations with step halving.

    Chains start here rather than at an intercept-only guess: the calibration
    is fitted locally at the current state, and from a point where every
    linear predictor is equal it can lock onto the wrong region. Falls back
    to the intercept-only guess if the likelihood is not maximised (e.g.
    separable data).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    trials = np.ones_like(y) if N is None else np.asarray(N, dtype=float)
    ybar = np.clip(y.sum() / trials.sum(), 0.5 / trials.sum(), 1.0 - 0.5 / trials.sum())
    if family == "poisson":
        base = np.log(max(y.mean(), 0.5 / y.size))
    elif family == "probit":
        base = special.ndtri(ybar)
    else:
        base = np.log(ybar / (1.0 - ybar))
    theta = np.linalg.lstsq(X, np.full(y.size, base), rcond=None)[0]

    def loglik_grad_info(th):
        eta = X @ th
        if family == "poisson":
            mu = np.exp(np.minimum(eta, 700.0))
            return np.sum(y * eta - mu), X.T @ (y - mu), (X * mu[:, None]).T @ X
        if family == "probit":
            lp, lq = special.log_ndtr(eta), special.log_ndtr(-eta)
            log_phi = -0.5 * eta * eta - 0.5 * np.log(2.0 * np.pi)
            score = y * np.exp(log_phi - lp) - (trials - y) * np.exp(log_phi - lq)
            w = trials * np.exp(2.0 * log_phi - lp - lq)
            return np.sum(y * lp + (trials - y) * lq), X.T @ score, (X * w[:, None]).T @ X
        p = special.expit(eta)
        ll = np.sum(y * eta - trials * np.logaddexp(0.0, eta))
        return ll, X.T @ (y - trials * p), (X * (trials * p * (1.0 - p))[:, None]).T @ X

    ll, grad, info = loglik_grad_info(theta)
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            return theta
        t = 1.0
        while t > 1e-8:
            cand = theta + t * step
            ll_c, grad_c, info_c = loglik_grad_info(cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12:
                break
            t *= 0.5
        else:
            return theta
        converged = abs(ll_c - ll) < 1e-10 * (1.0 + abs(ll))
        theta, ll, grad, info = cand, ll_c, grad_c, info_c
        if converged:
            break
    if np.any(np.abs(theta) > 40.0):
        return np.linalg.lstsq(X, np.full(y.size, base), rcond=None)[0]
    return theta
