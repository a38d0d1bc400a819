"""Poisson log-normal regression through the negative-binomial limit.

y_i ~ Poi(exp(eta_i)), eta_i = tau_i + x_i beta, tau_i ~ N(tau0, nu2).
The Poisson likelihood is the lambda -> inf limit of a negative binomial,
which Polya-Gamma augmentation turns into a Gaussian in eta. The proposal
uses that approximation with a large lambda; the MH step compares against
the exact Poisson likelihood, so no lambda bias survives in the CDA chain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .data import glm_start
from .dist import as_generator, log1p_exp, log_expm1, pg_tilt_factor, sample_inverse_gamma
from .errors import InvariantViolation, NumericalError, ParameterError
from .mcmc import CalibrationParams, CdaModel, ChainState, Proposal, properness_floor, calibrated_log_ratio
from .polyagamma import sample_polya_gamma

DEFAULT_LAMBDA = 1e9
IG_RATE_FLOOR = 1e-30
_EXP_LIMIT = 700.0


@dataclass
class PoissonData:
    X: np.ndarray
    y: np.ndarray
    sigma2_beta: float = 100.0
    sigma2_tau: float = 100.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float).reshape(self.y.size, -1)
        if np.any(self.y < 0) or np.any(self.y != np.floor(self.y)):
            raise ParameterError("Poisson counts must be non-negative integers")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]


def split_theta(theta, n):
    return theta[:n], theta[n:]


def poisson_loglik_terms(eta, y):
    """Exact Poisson log-likelihood terms (the log y! constant dropped)."""
    if np.any(eta > _EXP_LIMIT):
        raise InvariantViolation(f"linear predictor {float(np.max(eta)):.1f} overflows exp")
    return y * eta - np.exp(eta)


def nb_loglik_terms(eta, y, lam, calib: CalibrationParams | None = None):
    """y c - r lam log(1 + e^c) with c = eta - log lam + b."""
    r = 1.0 if calib is None else calib.r
    b = 0.0 if calib is None else calib.b
    c = eta - np.log(lam) + b
    return y * c - r * lam * log1p_exp(c)


def nb_approx_loglik(eta, y, lam, calib: CalibrationParams | None = None, epsilon: float = 1e-6) -> float:
    """Calibrated negative-binomial approximation to the Poisson likelihood."""
    if calib is not None:
        floor = properness_floor(y, lam, epsilon)
        if np.any(calib.r < floor * (1.0 - 1e-12)):
            raise ParameterError("r lam below y - 1 + eps: the approximation is improper")
    return float(np.sum(nb_loglik_terms(np.asarray(eta, dtype=float), np.asarray(y, dtype=float), lam, calib)))


def block_gaussian_draw(X, z, linear_tau, linear_beta, nu2, sigma2_beta, rng, return_cond_var=True):
    """Joint draw of (tau, beta) with precision

        [[diag(z + 1/nu2), Z X], [X'Z, X'ZX + I/sigma2_beta]]

    via the Schur complement on the diagonal block: beta from its marginal,
    then tau | beta elementwise. Cost O(n p^2 + p^3).
    """
    gen = as_generator(rng)
    n, p = X.shape
    a = z + 1.0 / nu2
    eps_tau = gen.standard_normal(n)
    if p == 0:
        tau = linear_tau / a + eps_tau / np.sqrt(a)
        return tau, np.empty(0), (1.0 / a if return_cond_var else None)
    # S = X' diag(z - z^2/a) X + I/sigma2_beta; z - z^2/a = z (1/nu2) / a
    w = z * (1.0 / nu2) / a
    S = (X * w[:, None]).T @ X + np.eye(p) / sigma2_beta
    rhs = linear_beta - X.T @ (z * linear_tau / a)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError("Schur complement not positive definite", "beta block") from None
    beta = linalg.cho_solve((L, True), rhs) + linalg.solve_triangular(L.T, gen.standard_normal(p), lower=False)
    tau = (linear_tau - z * (X @ beta)) / a + eps_tau / np.sqrt(a)
    if not return_cond_var:
        return tau, beta, None
    Linv = linalg.solve_triangular(L, np.eye(p), lower=True)
    var_beta = np.sum(Linv * Linv, axis=0)
    # diag of A^-1 + A^-1 B S^-1 B' A^-1 with B = Z X
    U = (X * (z / a)[:, None]) @ Linv.T
    var_tau = 1.0 / a + np.sum(U * U, axis=1)
    return tau, beta, np.concatenate([var_tau, var_beta])


def dense_gaussian_moments(X, z, linear_tau, linear_beta, nu2, sigma2_beta):
    """Mean and covariance of the same joint Gaussian by a dense solve.

    O((n + p)^3); kept as a reference for small problems.
    """
    n, p = X.shape
    Xt = np.hstack([np.eye(n), X])
    P = (Xt * z[:, None]).T @ Xt + np.diag(np.concatenate([np.full(n, 1.0 / nu2), np.full(p, 1.0 / sigma2_beta)]))
    cov = np.linalg.inv(P)
    return cov @ np.concatenate([linear_tau, linear_beta]), cov


def _linear_terms(data, z, r, b, lam, tau0, nu2):
    kappa = data.y - 0.5 * r * lam + z * (np.log(lam) - b)
    return kappa + tau0 / nu2, data.X.T @ kappa


def poisson_cda_propose(state: ChainState, data: PoissonData, calib: CalibrationParams, rng, lam=DEFAULT_LAMBDA,
                        blocked: bool = True) -> Proposal:
    """z_i ~ PG(r_i lam, eta_i - log lam + b_i), then (tau, beta) jointly.

    With ``blocked=False`` tau | beta and beta | tau are drawn in turn from
    the same latents instead; that kernel is still reversible for the
    calibrated posterior, so it can serve as a proposal for comparison.
    """
    gen = as_generator(rng)
    n = data.n
    r = np.broadcast_to(calib.r, data.y.shape)
    b = np.broadcast_to(calib.b, data.y.shape)
    tau, beta = split_theta(state.theta, n)
    tau0, nu2 = state.hypers["tau0"], state.hypers["nu2"]
    eta = tau + data.X @ beta
    z = sample_polya_gamma(r * lam, eta - np.log(lam) + b, gen)
    lin_tau, lin_beta = _linear_terms(data, z, r, b, lam, tau0, nu2)
    if blocked:
        tau_new, beta_new, cond_var = block_gaussian_draw(data.X, z, lin_tau, lin_beta, nu2, data.sigma2_beta, gen)
    else:
        kappa = lin_tau - tau0 / nu2
        a = z + 1.0 / nu2
        tau_new = (lin_tau - z * (data.X @ beta)) / a + gen.standard_normal(n) / np.sqrt(a)
        P = (data.X * z[:, None]).T @ data.X + np.eye(data.p) / data.sigma2_beta
        h = data.X.T @ (kappa - z * tau_new)
        if data.p:
            L = np.linalg.cholesky(P)
            beta_new = linalg.cho_solve((L, True), h) + linalg.solve_triangular(L.T, gen.standard_normal(data.p), lower=False)
            var_beta = np.diag(np.linalg.inv(P))
        else:
            beta_new, var_beta = np.empty(0), np.empty(0)
        cond_var = np.concatenate([1.0 / a, var_beta])
    return Proposal(np.concatenate([tau_new, beta_new]), z, cond_var)


def poisson_log_accept_ratio(state: ChainState, proposal: Proposal, data: PoissonData, calib: CalibrationParams,
                             lam=DEFAULT_LAMBDA) -> float:
    n = data.n
    eta = state.theta[:n] + data.X @ state.theta[n:]
    eta_new = proposal.theta[:n] + data.X @ proposal.theta[n:]
    return calibrated_log_ratio(
        poisson_loglik_terms(eta, data.y),
        poisson_loglik_terms(eta_new, data.y),
        nb_loglik_terms(eta, data.y, lam, calib),
        nb_loglik_terms(eta_new, data.y, lam, calib),
    )


def _beta_conditional_draw(data, z, kappa, tau, gen):
    P = (data.X * z[:, None]).T @ data.X + np.eye(data.p) / data.sigma2_beta
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NumericalError("beta precision not positive definite", "beta block") from None
    h = data.X.T @ (kappa - z * tau)
    beta = linalg.cho_solve((L, True), h) + linalg.solve_triangular(L.T, gen.standard_normal(data.p), lower=False)
    Linv = linalg.solve_triangular(L, np.eye(data.p), lower=True)
    return beta, np.sum(Linv * Linv, axis=0)


def poisson_blockwise_step(state: ChainState, data: PoissonData, calib: CalibrationParams, rng, accept_rng=None,
                           lam=DEFAULT_LAMBDA, correct: bool = True):
    """Metropolis-within-Gibbs version of the calibrated update.

    Given beta the tau_i are conditionally independent, so each unit gets its
    own accept/reject against its calibrated conditional. Latents are then
    redrawn at the updated tau and beta is proposed and accepted as one block.
    Each stage is a data-augmentation kernel reversible for its calibrated
    conditional, so the usual per-observation ratio applies stage by stage.
    Returns ``(state, accepted, log_ratio)`` with one entry per unit plus a
    final entry for the beta block.
    """
    gen = as_generator(rng)
    agen = gen if accept_rng is None else as_generator(accept_rng)
    n, log_lam = data.n, np.log(lam)
    r = np.broadcast_to(calib.r, data.y.shape)
    b = np.broadcast_to(calib.b, data.y.shape)
    tau, beta = (a.copy() for a in split_theta(state.theta, n))
    tau0, nu2 = state.hypers["tau0"], state.hypers["nu2"]
    xb = data.X @ beta

    z = sample_polya_gamma(r * lam, tau + xb - log_lam + b, gen)
    kappa = data.y - 0.5 * r * lam + z * (log_lam - b)
    a = z + 1.0 / nu2
    tau_prop = (kappa - z * xb + tau0 / nu2) / a + gen.standard_normal(n) / np.sqrt(a)
    var_tau = 1.0 / a
    if correct:
        lr_tau = calibrated_log_ratio(
            poisson_loglik_terms(tau + xb, data.y), poisson_loglik_terms(tau_prop + xb, data.y),
            nb_loglik_terms(tau + xb, data.y, lam, calib), nb_loglik_terms(tau_prop + xb, data.y, lam, calib),
            per_unit=True,
        )
        acc_tau = np.log(agen.random(n)) < lr_tau
    else:
        lr_tau, acc_tau = np.full(n, np.nan), np.ones(n, bool)
    tau = np.where(acc_tau, tau_prop, tau)

    lr_beta, acc_beta, var_beta = np.nan, True, np.empty(0)
    if data.p:
        z = sample_polya_gamma(r * lam, tau + xb - log_lam + b, gen)
        kappa = data.y - 0.5 * r * lam + z * (log_lam - b)
        beta_prop, var_beta = _beta_conditional_draw(data, z, kappa, tau, gen)
        if correct:
            xb_prop = data.X @ beta_prop
            lr_beta = calibrated_log_ratio(
                poisson_loglik_terms(tau + xb, data.y), poisson_loglik_terms(tau + xb_prop, data.y),
                nb_loglik_terms(tau + xb, data.y, lam, calib), nb_loglik_terms(tau + xb_prop, data.y, lam, calib),
            )
            acc_beta = bool(np.log(agen.random()) < lr_beta)
        if acc_beta:
            beta = beta_prop
    new = replace(state, theta=np.concatenate([tau, beta]), latents=z,
                  cond_var=np.concatenate([var_tau, var_beta]))
    accepted = np.append(acc_tau, acc_beta) if data.p else acc_tau
    log_ratio = np.append(lr_tau, lr_beta) if data.p else lr_tau
    return new, accepted, log_ratio


def poisson_cda_accept(state: ChainState, proposal: Proposal, data: PoissonData, calib: CalibrationParams, rng,
                       lam=DEFAULT_LAMBDA):
    """MH step against the exact Poisson likelihood; returns ``(state, accepted)``."""
    log_ratio = poisson_log_accept_ratio(state, proposal, data, calib, lam)
    accepted = bool(np.log(as_generator(rng).random()) < log_ratio)
    theta = proposal.theta if accepted else state.theta
    return replace(state, theta=theta, latents=proposal.latents, cond_var=proposal.cond_var), accepted


def poisson_calibrate(eta, b_prev, lam=DEFAULT_LAMBDA, y=None, epsilon: float = 1e-6,
                      tau=None, literal_tau_formula: bool = False) -> CalibrationParams:
    """Match lam r g(|eta + b - log lam|) to the Poisson information e^eta,
    then solve r lam log(1 + e^(eta + b - log lam)) = e^eta for b.

    ``literal_tau_formula`` multiplies the information by tau_i, as one
    printed version of the rule has it; only meant for comparisons.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    b_prev = np.broadcast_to(np.asarray(b_prev, dtype=float), eta.shape)
    log_lam = np.log(lam)
    info = np.exp(eta)
    if literal_tau_formula:
        if tau is None:
            raise ParameterError("literal formula needs tau")
        info = np.asarray(tau, dtype=float) * info
    r = info / (lam * pg_tilt_factor(eta + b_prev - log_lam))
    if y is not None:
        r = np.maximum(r, properness_floor(y, lam, epsilon))
    r = np.maximum(r, np.finfo(float).tiny)
    b = log_expm1(np.exp(eta - log_lam - np.log(r))) - eta + log_lam
    return CalibrationParams(r, np.atleast_1d(b), epsilon)


def poisson_hyper_update(state: ChainState, data: PoissonData, rng) -> tuple[float, float]:
    """tau0 from its Gaussian conditional, then nu2 ~ IG(n/2 - 1, SS/2)."""
    n = data.n
    if n < 5:
        raise ParameterError("need n >= 5 for the variance update")
    gen = as_generator(rng)
    tau = state.theta[:n]
    nu2 = state.hypers["nu2"]
    prec = n / nu2 + 1.0 / data.sigma2_tau
    tau0 = tau.sum() / nu2 / prec + gen.standard_normal() / np.sqrt(prec)
    rate = max(0.5 * float(np.sum((tau - tau0) ** 2)), IG_RATE_FLOOR)
    return float(tau0), float(sample_inverse_gamma(0.5 * n - 1.0, rate, gen))


class PoissonLogNormalModel(CdaModel):
    """theta = (tau_1..tau_n, beta_1..beta_p)."""

    def __init__(self, data: PoissonData, lam: float = DEFAULT_LAMBDA, epsilon: float = 1e-6,
                 blocked: bool = True, literal_tau_formula: bool = False, scan: str = "joint"):
        if scan not in ("joint", "blockwise"):
            raise ParameterError(f"unknown scan {scan!r}")
        if lam < 1e3:
            raise ParameterError("lambda must be at least 1e3")
        if data.n < 5:
            raise ParameterError("need n >= 5")
        self.data = data
        self.lam = float(lam)
        self.n_calib = data.n
        self.blocked = blocked
        self.literal_tau_formula = literal_tau_formula
        self.scan = scan
        self._floor = properness_floor(data.y, self.lam, epsilon)

    @property
    def coord_names(self):
        return [f"tau_{i}" for i in range(self.data.n)] + [f"beta_{j}" for j in range(self.data.p)]

    def eta(self, theta):
        n = self.data.n
        return theta[:n] + self.data.X @ theta[n:]

    def init_state(self, rng):
        d = self.data
        start = glm_start(np.column_stack([np.ones(d.n), d.X]), d.y, "poisson")
        beta = start[1:]
        # per-unit crude fits; equal starting tau_i would collapse nu2 at once
        tau = np.log(d.y + 0.5) - d.X @ beta
        hypers = {"tau0": float(tau.mean()), "nu2": float(max(tau.var(), 1e-2))}
        return ChainState(theta=np.concatenate([tau, beta]), hypers=hypers)

    def floor(self, calib):
        return self._floor

    def propose(self, state, calib, rng):
        if not calib.is_identity and np.any(calib.r < self._floor * (1.0 - 1e-12)):
            raise ParameterError("calibration below the Poisson properness floor")
        return poisson_cda_propose(state, self.data, calib, rng, self.lam, self.blocked)

    def blockwise_step(self, state, calib, rng, accept_rng, correct):
        if not calib.is_identity and np.any(calib.r < self._floor * (1.0 - 1e-12)):
            raise ParameterError("calibration below the Poisson properness floor")
        return poisson_blockwise_step(state, self.data, calib, rng, accept_rng, self.lam, correct)

    def log_accept_ratio(self, state, proposal, calib):
        return poisson_log_accept_ratio(state, proposal, self.data, calib, self.lam)

    def log_target(self, theta):
        return float(np.sum(poisson_loglik_terms(self.eta(np.asarray(theta, dtype=float)), self.data.y)))

    def log_proposal_marginal(self, theta, calib):
        return float(np.sum(nb_loglik_terms(self.eta(np.asarray(theta, dtype=float)), self.data.y, self.lam, calib)))

    def calibrate(self, state, calib):
        return poisson_calibrate(
            self.eta(state.theta), calib.b, self.lam, self.data.y, calib.epsilon,
            tau=state.theta[: self.data.n], literal_tau_formula=self.literal_tau_formula,
        )

    def update_hypers(self, state, rng):
        tau0, nu2 = poisson_hyper_update(state, self.data, rng)
        return replace(state, hypers={"tau0": tau0, "nu2": nu2})


def generate_poisson_data(n: int, p: int, rng, beta=None, tau0: float = 0.0, nu2: float = 1.0,
                          covariate_sd: float = 1.0):
    """Synthetic Poisson log-normal data plus a hold-out draw for the same
    units (shared tau, fresh covariates). Returns (data, holdout, truth)."""
    gen = as_generator(rng)
    beta = np.full(p, 1.0) if beta is None else np.asarray(beta, dtype=float)
    tau = gen.normal(tau0, np.sqrt(nu2), n)
    X = gen.normal(0.0, covariate_sd, (n, p))
    X_hold = gen.normal(0.0, covariate_sd, (n, p))
    y = gen.poisson(np.exp(tau + X @ beta)).astype(float)
    y_hold = gen.poisson(np.exp(tau + X_hold @ beta)).astype(float)
    truth = {"beta": beta, "tau": tau, "tau0": tau0, "nu2": nu2}
    return PoissonData(X, y), PoissonData(X_hold, y_hold), truth


def predict_holdout(theta_samples, holdout: PoissonData) -> np.ndarray:
    """Posterior mean of exp(x_holdout beta + tau) per unit."""
    n = holdout.n
    eta = theta_samples[:, :n] + theta_samples[:, n:] @ holdout.X.T
    return np.exp(np.minimum(eta, _EXP_LIMIT)).mean(axis=0)
