"""Logistic regression with Polya-Gamma augmentation.

Three calibrated samplers share the calibration rule here: the regression
sampler with one latent per observation, the collapsed intercept-only
sampler that needs a single latent whatever n is, and a subsampled variant
that keeps every success and a random fraction of the failures.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .data import BinaryData, glm_start
from .dist import as_generator, log1p_exp, log_expm1, pg_tilt_factor, sample_mvn_from_precision
from .errors import NumericalError, ParameterError
from .mcmc import (
    CalibrationParams,
    CdaModel,
    ChainState,
    Proposal,
    cda_mh_step,
    properness_floor,
    calibrated_log_ratio,
)
from .polyagamma import sample_polya_gamma

LogisticData = BinaryData


def logistic_weight(eta):
    """Unit Fisher information e^eta / (1 + e^eta)^2, without overflow."""
    eta = np.asarray(eta, dtype=float)
    return np.exp(eta - 2.0 * log1p_exp(eta))


def logistic_loglik_terms(eta, y, calib: CalibrationParams | None = None, weight=1.0):
    """Per-observation ``k (y (eta + b) - r log(1 + e^(eta + b)))``."""
    if calib is None:
        return weight * (y * eta - log1p_exp(eta))
    c = eta + calib.b
    return weight * (y * c - calib.r * log1p_exp(c))


def logistic_cda_loglik(theta, data: BinaryData, calib: CalibrationParams | None = None) -> float:
    eta = data.X @ np.asarray(theta, dtype=float)
    return float(np.sum(logistic_loglik_terms(eta, data.y, calib)))


def logistic_calibrate(eta, b_prev, floor=None, epsilon: float = 1e-6) -> CalibrationParams:
    """Fisher-matching working parameters, one pass.

    r matches the PG conditional information r * g(|eta + b_prev|) to the
    logistic information, g(x) = tanh(x/2)/(2x); it is then held at or above
    ``floor``. b is solved from the new r so the calibrated likelihood agrees
    with the exact one at eta: (1 + e^eta) = (1 + e^(eta + b))^r.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    b_prev = np.broadcast_to(np.asarray(b_prev, dtype=float), eta.shape)
    r = logistic_weight(eta) / pg_tilt_factor(eta + b_prev)
    if floor is not None:
        r = np.maximum(r, floor)
    r = np.maximum(r, np.finfo(float).tiny)
    b = log_expm1(log1p_exp(eta) / r) - eta
    return CalibrationParams(r, np.atleast_1d(b), epsilon)


def _pg_gaussian_update(X, z, linear_resp, rng):
    XZ = X * z[:, None]
    return sample_mvn_from_precision(XZ.T @ X, X.T @ linear_resp, rng, return_moments=True)


def logistic_cda_propose(state: ChainState, data: BinaryData, calib: CalibrationParams, rng) -> Proposal:
    """z_i ~ PG(r_i, |eta_i + b_i|), then theta* from the Gaussian full conditional
    with precision X'ZX and linear term X'(y - r/2 - Z b)."""
    gen = as_generator(rng)
    r = np.broadcast_to(calib.r, data.y.shape)
    b = np.broadcast_to(calib.b, data.y.shape)
    eta = data.X @ state.theta
    z = sample_polya_gamma(r, eta + b, gen)
    try:
        theta, _, cond_var = _pg_gaussian_update(data.X, z, data.y - 0.5 * r - z * b, gen)
    except NumericalError as exc:
        raise NumericalError("singular X'ZX in logistic update", exc.where) from None
    return Proposal(theta, z, cond_var)


def logistic_da_update(state: ChainState, data: BinaryData, rng) -> ChainState:
    prop = logistic_cda_propose(state, data, CalibrationParams.identity(), rng)
    return replace(state, theta=prop.theta, latents=prop.latents, cond_var=prop.cond_var)


def _init_theta(X, y):
    return glm_start(X, y, "logistic")


def _mvn_logpdf_prec(x, mean, L):
    """log N(x; mean, P^-1) given the Cholesky factor L of P."""
    d = L.T @ (x - mean)
    return np.sum(np.log(np.diag(L))) - 0.5 * d @ d - 0.5 * x.size * np.log(2.0 * np.pi)


def mh_mvn_baseline_step(state: ChainState, data: BinaryData, rng, accept_rng=None):
    """Random-walk MH with proposal N(theta, I(theta)^-1).

    The covariance depends on where the walk stands, so the reverse
    proposal density enters the ratio.
    """
    gen = as_generator(rng)
    agen = gen if accept_rng is None else as_generator(accept_rng)

    def info_chol(theta):
        w = logistic_weight(data.X @ theta)
        try:
            return np.linalg.cholesky((data.X * w[:, None]).T @ data.X)
        except np.linalg.LinAlgError:
            raise NumericalError("singular Fisher information", f"p={data.p}") from None

    theta = state.theta
    L = info_chol(theta)
    prop = theta + solve_triangular(L.T, gen.standard_normal(theta.size), lower=False)
    L_prop = info_chol(prop)
    log_ratio = (
        logistic_cda_loglik(prop, data) - logistic_cda_loglik(theta, data)
        + _mvn_logpdf_prec(theta, prop, L_prop) - _mvn_logpdf_prec(prop, theta, L)
    )
    accepted = bool(np.log(agen.random()) < log_ratio)
    new = replace(state, theta=prop if accepted else theta, cond_var=None)
    return new, accepted, log_ratio


class LogisticModel(CdaModel):
    """Logistic regression, flat prior, one (r_i, b_i) per observation."""

    def __init__(self, data: BinaryData, epsilon: float = 1e-6):
        self.data = data
        self.n_calib = data.n
        self._floor = properness_floor(data.y, 1.0, epsilon)

    @property
    def coord_names(self):
        return [f"theta_{j}" for j in range(self.data.p)]

    def init_state(self, rng):
        return ChainState(theta=_init_theta(self.data.X, self.data.y))

    def floor(self, calib):
        return self._floor

    def propose(self, state, calib, rng):
        return logistic_cda_propose(state, self.data, calib, rng)

    def log_accept_ratio(self, state, proposal, calib):
        y = self.data.y
        eta = self.data.X @ state.theta
        eta_new = self.data.X @ proposal.theta
        return calibrated_log_ratio(
            logistic_loglik_terms(eta, y),
            logistic_loglik_terms(eta_new, y),
            logistic_loglik_terms(eta, y, calib),
            logistic_loglik_terms(eta_new, y, calib),
        )

    def log_target(self, theta):
        return logistic_cda_loglik(theta, self.data)

    def log_proposal_marginal(self, theta, calib):
        return logistic_cda_loglik(theta, self.data, calib)

    def calibrate(self, state, calib):
        eta = self.data.X @ state.theta
        return logistic_calibrate(eta, calib.b, self._floor, calib.epsilon)

    def mh_mvn_step(self, state, rng, accept_rng=None):
        return mh_mvn_baseline_step(state, self.data, rng, accept_rng)


class CollapsedLogisticModel(CdaModel):
    """Intercept-only logistic model from the sufficient statistics (n, s).

    All observations share theta, so the PG latents sum to a single
    PG(n r, theta + b) variate and one iteration costs O(1) in n.
    """

    n_calib = 1

    def __init__(self, n: float, s: float, epsilon: float = 1e-6):
        if not 0 <= s <= n or n < 1:
            raise ParameterError("need 0 <= s <= n and n >= 1")
        self.n = float(n)
        self.s = float(s)
        self._floor = properness_floor(self.s, self.n, epsilon)

    coord_names = ["theta"]

    def init_state(self, rng):
        s = min(max(self.s, 0.5), self.n - 0.5)
        return ChainState(theta=np.array([np.log(s) - np.log(self.n - s)]))

    def floor(self, calib):
        return np.atleast_1d(self._floor)

    def _check_floor(self, calib):
        if not calib.is_identity and np.any(calib.r < self._floor * (1.0 - 1e-12)):
            raise ParameterError(f"r={calib.r[0]:.6g} below properness floor {float(self._floor):.6g}")

    def propose(self, state, calib, rng):
        self._check_floor(calib)
        gen = as_generator(rng)
        r, b = float(calib.r[0]), float(calib.b[0])
        theta = float(state.theta[0])
        z = sample_polya_gamma(self.n * r, theta + b, gen)
        mean = (self.s - 0.5 * r * self.n - z * b) / z
        new = mean + gen.standard_normal() / np.sqrt(z)
        return Proposal(np.array([new]), z, np.array([1.0 / z]))

    def _terms(self, theta, calib=None):
        theta = float(theta[0])
        if calib is None:
            return np.array([theta * self.s, -self.n * float(log1p_exp(theta))])
        c = theta + float(calib.b[0])
        return np.array([c * self.s, -self.n * float(calib.r[0]) * float(log1p_exp(c))])

    def log_accept_ratio(self, state, proposal, calib):
        return calibrated_log_ratio(
            self._terms(state.theta), self._terms(proposal.theta),
            self._terms(state.theta, calib), self._terms(proposal.theta, calib),
        )

    def log_target(self, theta):
        return float(np.sum(self._terms(np.atleast_1d(theta))))

    def log_proposal_marginal(self, theta, calib):
        return float(np.sum(self._terms(np.atleast_1d(theta), calib)))

    def calibrate(self, state, calib):
        return logistic_calibrate(state.theta, calib.b, self._floor, calib.epsilon)


def logistic_intercept_collapsed_step(state: ChainState, n: float, s: float, calib: CalibrationParams,
                                      rng, accept_rng=None):
    """One collapsed CDA-MH step; returns ``(state, accepted)``."""
    new, accepted, _ = cda_mh_step(state, CollapsedLogisticModel(n, s, calib.epsilon), calib, rng, accept_rng)
    return new, accepted


@dataclass
class SubsampleSpec:
    """Successes ``V1`` and a sampled set of failures ``V0``; failures carry
    weight ``(n - |V1|) / |V0|`` so they stand in for the whole zero-set."""

    V1: np.ndarray
    V0: np.ndarray
    n: int

    def __post_init__(self):
        if self.V0.size < 1:
            raise ParameterError("subsample of failures is empty")
        if np.intersect1d(self.V1, self.V0).size:
            raise ParameterError("V1 and V0 overlap")

    @property
    def index(self) -> np.ndarray:
        return np.concatenate([self.V1, self.V0])

    @property
    def zero_weight(self) -> float:
        return (self.n - self.V1.size) / self.V0.size

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([np.ones(self.V1.size), np.full(self.V0.size, self.zero_weight)])


class SubsampledLogisticModel(CdaModel):
    """Calibrated PG sampler on all successes plus a random fraction of the
    failures, redrawn every iteration.

    The chain targets the likelihood with the failure part raised to the
    power (n - |V1|)/|V0| and averaged over subsamples, which approximates
    the full posterior rather than matching it exactly.
    """

    def __init__(self, data: BinaryData, frac: float, epsilon: float = 1e-6):
        if not 0.0 < frac <= 1.0:
            raise ParameterError("subsample fraction must be in (0, 1]")
        self.data = data
        self.n_calib = data.n
        self.ones = np.flatnonzero(data.y == 1.0)
        self.zeros = np.flatnonzero(data.y == 0.0)
        if self.zeros.size == 0:
            raise ParameterError("no failures to subsample")
        self.m0 = max(1, int(round(frac * self.zeros.size)))
        k0 = (data.n - self.ones.size) / self.m0
        self.k = np.where(data.y == 1.0, 1.0, k0)
        self._floor = properness_floor(data.y, self.k, epsilon)

    @property
    def coord_names(self):
        return [f"theta_{j}" for j in range(self.data.p)]

    def draw_subsample(self, rng) -> SubsampleSpec:
        gen = as_generator(rng)
        if self.m0 == self.zeros.size:
            V0 = self.zeros
        else:
            V0 = np.sort(gen.choice(self.zeros, self.m0, replace=False))
        return SubsampleSpec(self.ones, V0, self.data.n)

    def init_state(self, rng):
        return ChainState(theta=_init_theta(self.data.X, self.data.y))

    def floor(self, calib):
        return self._floor

    def propose(self, state, calib, rng):
        gen = as_generator(rng)
        spec = self.draw_subsample(gen)
        idx = spec.index
        k = spec.weights
        X = self.data.X[idx]
        r = np.broadcast_to(calib.r, self.data.y.shape)[idx]
        b = np.broadcast_to(calib.b, self.data.y.shape)[idx]
        if np.any(r < self._floor[idx] * (1.0 - 1e-12)):
            raise ParameterError("calibration below the subsampled properness floor")
        z = sample_polya_gamma(k * r, X @ state.theta + b, gen)
        theta, _, cond_var = _pg_gaussian_update(X, z, self.data.y[idx] - 0.5 * k * r - z * b, gen)
        return Proposal(theta, z, cond_var, context=spec)

    def log_accept_ratio(self, state, proposal, calib):
        spec: SubsampleSpec = proposal.context
        idx, k = spec.index, spec.weights
        X, y = self.data.X[idx], self.data.y[idx]
        sub = CalibrationParams(
            np.broadcast_to(calib.r, self.data.y.shape)[idx], np.broadcast_to(calib.b, self.data.y.shape)[idx]
        )
        eta, eta_new = X @ state.theta, X @ proposal.theta
        return calibrated_log_ratio(
            logistic_loglik_terms(eta, y, None, k),
            logistic_loglik_terms(eta_new, y, None, k),
            logistic_loglik_terms(eta, y, sub, k),
            logistic_loglik_terms(eta_new, y, sub, k),
        )

    def weighted_loglik(self, theta, spec: SubsampleSpec) -> float:
        idx = spec.index
        eta = self.data.X[idx] @ theta
        return float(np.sum(logistic_loglik_terms(eta, self.data.y[idx], None, spec.weights)))

    def log_target(self, theta):
        return logistic_cda_loglik(theta, self.data)

    def calibrate(self, state, calib):
        eta = self.data.X @ state.theta
        return logistic_calibrate(eta, calib.b, self._floor, calib.epsilon)


def logistic_subsampled_cda_step(state: ChainState, model: SubsampledLogisticModel, calib: CalibrationParams,
                                 rng, accept_rng=None):
    new, accepted, _ = cda_mh_step(state, model, calib, rng, accept_rng)
    return new, accepted
