"""Probit regression with truncated-normal augmentation, plain and calibrated."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy import special

from .data import BinaryData, glm_start
from .dist import as_generator, sample_mvn_from_precision, sample_truncated_normal
from .errors import ParameterError
from .mcmc import CalibrationParams, CdaModel, ChainState, Proposal, calibrated_log_ratio

# r is exp(log r); clamp before exponentiating so |eta| near 38 stays finite
_LOG_R_MAX = np.log(1e300)


ProbitData = BinaryData


def _latent_bounds(y):
    lower = np.where(y == 1.0, 0.0, -np.inf)
    upper = np.where(y == 1.0, np.inf, 0.0)
    return lower, upper


def _gaussian_update(X, weights, response, rng):
    """theta ~ N((X'WX)^-1 X'W response, (X'WX)^-1); returns (draw, cond var)."""
    XW = X * weights[:, None]
    draw, _, cond_var = sample_mvn_from_precision(XW.T @ X, XW.T @ response, rng, return_moments=True)
    return draw, cond_var


def probit_cda_propose(state: ChainState, data: ProbitData, calib: CalibrationParams, rng) -> Proposal:
    """Calibrated sweep: z_i ~ N(eta_i + b_i, r_i) on the side of y_i, then a
    weighted least-squares draw of theta with weights 1/r_i."""
    gen = as_generator(rng)
    r = np.broadcast_to(calib.r, data.y.shape)
    b = np.broadcast_to(calib.b, data.y.shape)
    if np.any(~(r > 0.0)):
        raise ParameterError("calibration r must be positive")
    eta = data.X @ state.theta
    lower, upper = _latent_bounds(data.y)
    z = sample_truncated_normal(eta + b, r, lower, upper, gen)
    theta, cond_var = _gaussian_update(data.X, 1.0 / r, z - b, gen)
    return Proposal(theta, z, cond_var)


def probit_da_update(state: ChainState, data: ProbitData, rng) -> ChainState:
    prop = probit_cda_propose(state, data, CalibrationParams.identity(), rng)
    return replace(state, theta=prop.theta, latents=prop.latents, cond_var=prop.cond_var)


def probit_loglik_terms(theta, data: ProbitData, calib: CalibrationParams | None = None):
    eta = data.X @ np.asarray(theta, dtype=float)
    if calib is None:
        s = eta
    else:
        s = (eta + calib.b) / np.sqrt(calib.r)
    return np.where(data.y == 1.0, special.log_ndtr(s), special.log_ndtr(-s))


def probit_cda_loglik(theta, data: ProbitData, calib: CalibrationParams | None = None) -> float:
    """Log-likelihood with eta replaced by (eta + b)/sqrt(r); exact probit
    likelihood when ``calib`` is None or the identity."""
    return float(np.sum(probit_loglik_terms(theta, data, calib)))


def probit_calibrate(eta, calib: CalibrationParams | None = None) -> CalibrationParams:
    """r = Phi(eta)(1 - Phi(eta)) / phi(eta)^2 and b = eta (sqrt(r) - 1).

    Matching 1/r to the unit Fisher information keeps the proposal as wide as
    the posterior; b then puts (eta + b)/sqrt(r) back at eta.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    log_phi = -0.5 * eta * eta - 0.5 * np.log(2.0 * np.pi)
    log_r = special.log_ndtr(eta) + special.log_ndtr(-eta) - 2.0 * log_phi
    r = np.exp(np.minimum(log_r, _LOG_R_MAX))
    b = eta * (np.sqrt(r) - 1.0)
    epsilon = calib.epsilon if calib is not None else 1e-6
    return CalibrationParams(r, b, epsilon)


class ProbitModel(CdaModel):
    """Probit regression under a flat prior on theta.

    Calibration is per observation (length n) unless ``shared_calibration``
    is set, in which case one (r, b) pair applies to every observation; the
    intercept-only experiments with a hand-set r use that form.
    """

    def __init__(self, data: ProbitData, shared_calibration: bool = False):
        self.data = data
        self.n_calib = 1 if shared_calibration else data.n
        self._shared = shared_calibration
        # with one (r, b) for every row, identical (x, y) rows contribute
        # identical terms, so the likelihood is evaluated once per distinct row
        rows, counts = np.unique(np.column_stack([data.X, data.y]), axis=0, return_counts=True)
        self._distinct = ProbitData(rows[:, :-1], rows[:, -1]) if len(rows) < data.n else None
        self._counts = counts.astype(float)

    @property
    def coord_names(self):
        return [f"theta_{j}" for j in range(self.data.p)]

    def init_state(self, rng) -> ChainState:
        return ChainState(theta=glm_start(self.data.X, self.data.y, "probit"))

    def propose(self, state, calib, rng):
        return probit_cda_propose(state, self.data, calib, rng)

    def log_accept_ratio(self, state, proposal, calib):
        data, w = self.data, 1.0
        if calib.r.size == 1 and self._distinct is not None:
            data, w = self._distinct, self._counts
        return calibrated_log_ratio(
            w * probit_loglik_terms(state.theta, data),
            w * probit_loglik_terms(proposal.theta, data),
            w * probit_loglik_terms(state.theta, data, calib),
            w * probit_loglik_terms(proposal.theta, data, calib),
        )

    def log_target(self, theta):
        return probit_cda_loglik(theta, self.data)

    def log_proposal_marginal(self, theta, calib):
        return probit_cda_loglik(theta, self.data, calib)

    def calibrate(self, state, calib):
        eta = self.data.X @ state.theta
        if self._shared:
            # one pair for all rows; only sensible when eta is constant
            eta = np.array([eta.mean()])
        return probit_calibrate(eta, calib)

    def adaptation_snapshot(self, state, calib):
        eta = self.data.X @ state.theta
        return {"eta": eta, "transformed": (eta + calib.b) / np.sqrt(calib.r)}


def intercept_calibration(n: int, eta: float = -3.7, r: float | None = None) -> CalibrationParams:
    """Shared (r, b) for the intercept-only model: r defaults to n / log n and
    b = eta (sqrt(r) - 1), so the calibrated likelihood matches at ``eta``."""
    if r is None:
        if n < 2:
            raise ParameterError("n / log n needs n >= 2")
        r = n / np.log(n)
    return CalibrationParams([r], [eta * (np.sqrt(r) - 1.0)])
