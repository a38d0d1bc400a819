"""Hierarchical binomial-logit model with per-unit calibrated updates.

y_i ~ Binom(N_i, logistic(theta_i)), theta_i ~ N(theta0, sigma2),
theta0 ~ N(loc_mean, loc_var), flat prior on sigma2. Given the hyperparameters
the units are independent, so each unit's proposal is accepted or rejected
on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dist import as_generator, log1p_exp, sample_inverse_gamma
from .errors import ParameterError
from .logistic import logistic_calibrate
from .mcmc import CalibrationParams, CdaModel, ChainState, Proposal, properness_floor, calibrated_log_ratio
from .polyagamma import sample_polya_gamma

IG_RATE_FLOOR = 1e-30


@dataclass
class HierBinomialData:
    y: np.ndarray
    N: np.ndarray
    prior_mean_loc: float = -12.0
    prior_var_loc: float = 49.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.N = np.asarray(self.N, dtype=float).ravel()
        if self.y.shape != self.N.shape:
            raise ParameterError("y and N must have the same length")
        if np.any(self.N < 1) or np.any(self.y < 0) or np.any(self.y > self.N):
            raise ParameterError("need N_i >= 1 and 0 <= y_i <= N_i")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def pooled_logit(self) -> float:
        s, t = self.y.sum(), self.N.sum()
        s = min(max(s, 0.5), t - 0.5)
        return float(np.log(s / (t - s)))


def binomial_loglik_terms(theta, data: HierBinomialData, calib: CalibrationParams | None = None):
    """Per-unit y (theta + b) - N r log(1 + e^(theta + b)); binomial
    coefficients omitted since they cancel everywhere they are used."""
    if calib is None:
        return data.y * theta - data.N * log1p_exp(theta)
    c = theta + calib.b
    return data.y * c - data.N * calib.r * log1p_exp(c)


def binomial_calibrate(theta, b_prev, data: HierBinomialData, epsilon: float = 1e-6) -> CalibrationParams:
    """Logistic Fisher matching per unit; the N_i factors cancel, leaving only
    the floor (y_i - 1 + eps)/N_i specific to the binomial case."""
    return logistic_calibrate(theta, b_prev, properness_floor(data.y, data.N, epsilon), epsilon)


def hier_binomial_hyper_update(state: ChainState, data: HierBinomialData, rng) -> tuple[float, float]:
    """Draw theta0 then sigma2 from their full conditionals."""
    n = data.n
    if n < 5:
        raise ParameterError("need at least 5 units for the variance update")
    gen = as_generator(rng)
    theta = state.theta
    sigma2 = state.hypers["sigma2"]
    prec = n / sigma2 + 1.0 / data.prior_var_loc
    mean = (theta.sum() / sigma2 + data.prior_mean_loc / data.prior_var_loc) / prec
    theta0 = mean + gen.standard_normal() / np.sqrt(prec)
    rate = max(0.5 * float(np.sum((theta - theta0) ** 2)), IG_RATE_FLOOR)
    sigma2 = sample_inverse_gamma(0.5 * n - 1.0, rate, gen)
    return float(theta0), float(sigma2)


def _unit_proposal(theta, y, N, r, b, theta0, sigma2, gen):
    z = sample_polya_gamma(N * r, theta + b, gen)
    prec = z + 1.0 / sigma2
    mean = (y - 0.5 * r * N - z * b + theta0 / sigma2) / prec
    return mean + gen.standard_normal(np.shape(mean)) / np.sqrt(prec), z, 1.0 / prec


def hier_binomial_unit_step(i: int, state: ChainState, data: HierBinomialData, calib: CalibrationParams, rng,
                            accept_rng=None) -> tuple[float, bool]:
    """Calibrated update of a single unit; returns ``(theta_i, accepted_i)``."""
    gen = as_generator(rng)
    agen = gen if accept_rng is None else as_generator(accept_rng)
    r = float(np.broadcast_to(calib.r, data.y.shape)[i])
    b = float(np.broadcast_to(calib.b, data.y.shape)[i])
    y, N = data.y[i], data.N[i]
    floor = (y - 1.0 + calib.epsilon) / N
    if not calib.is_identity and r < floor * (1.0 - 1e-12):
        raise ParameterError(f"unit {i}: r={r:.6g} below properness floor {floor:.6g}")
    theta = float(state.theta[i])
    new, _, _ = _unit_proposal(theta, y, N, r, b, state.hypers["theta0"], state.hypers["sigma2"], gen)
    unit = CalibrationParams([r], [b])
    one = HierBinomialData(np.array([y]), np.array([N]))
    log_ratio = calibrated_log_ratio(
        binomial_loglik_terms(theta, one), binomial_loglik_terms(new, one),
        binomial_loglik_terms(theta, one, unit), binomial_loglik_terms(new, one, unit),
    )
    accepted = bool(np.log(agen.random()) < log_ratio)
    return (new if accepted else theta), accepted


class HierBinomialModel(CdaModel):
    unit_blocks = True

    def __init__(self, data: HierBinomialData, epsilon: float = 1e-6, init_sigma2: float = 1.0):
        if data.n < 5:
            raise ParameterError("need at least 5 units")
        self.data = data
        self.n_calib = data.n
        self._floor = properness_floor(data.y, data.N, epsilon)
        self._init_sigma2 = init_sigma2

    @property
    def coord_names(self):
        return [f"theta_{i}" for i in range(self.data.n)]

    def init_state(self, rng):
        # every unit starts at the pooled rate; DA then has to spread them out
        pooled = self.data.pooled_logit
        return ChainState(theta=np.full(self.data.n, pooled),
                          hypers={"theta0": pooled, "sigma2": self._init_sigma2})

    def floor(self, calib):
        return self._floor

    def propose(self, state, calib, rng):
        if not calib.is_identity and np.any(calib.r < self._floor * (1.0 - 1e-12)):
            raise ParameterError("calibration below the binomial properness floor")
        gen = as_generator(rng)
        theta, z, cond_var = _unit_proposal(
            state.theta, self.data.y, self.data.N, calib.r, calib.b,
            state.hypers["theta0"], state.hypers["sigma2"], gen,
        )
        return Proposal(theta, z, cond_var)

    def log_accept_ratio(self, state, proposal, calib):
        d = self.data
        return calibrated_log_ratio(
            binomial_loglik_terms(state.theta, d), binomial_loglik_terms(proposal.theta, d),
            binomial_loglik_terms(state.theta, d, calib), binomial_loglik_terms(proposal.theta, d, calib),
            per_unit=True,
        )

    def log_target(self, theta):
        return float(np.sum(binomial_loglik_terms(np.asarray(theta, dtype=float), self.data)))

    def log_proposal_marginal(self, theta, calib):
        return float(np.sum(binomial_loglik_terms(np.asarray(theta, dtype=float), self.data, calib)))

    def calibrate(self, state, calib):
        return binomial_calibrate(state.theta, calib.b, self.data, calib.epsilon)

    def update_hypers(self, state, rng):
        theta0, sigma2 = hier_binomial_hyper_update(state, self.data, rng)
        return replace(state, hypers={"theta0": theta0, "sigma2": sigma2})


def generate_hier_binomial_data(n: int, rng, loc: float = -12.0, var: float = 7.7,
                                log_trials_mean: float = 8.5, log_trials_sd: float = 2.0,
                                max_trials: float = 1e8) -> tuple[HierBinomialData, np.ndarray]:
    """Synthetic rare-event units: log-normal trial counts (heavy right tail)
    and logit rates drawn from N(loc, var). Returns data and the true rates."""
    gen = as_generator(rng)
    N = np.minimum(1.0 + np.floor(np.exp(gen.normal(log_trials_mean, log_trials_sd, n))), max_trials)
    theta = gen.normal(loc, np.sqrt(var), n)
    y = gen.binomial(N.astype(np.int64), 1.0 / (1.0 + np.exp(-theta))).astype(float)
    return HierBinomialData(y, N), theta
