"""Model-agnostic calibrated data augmentation machinery.

A calibrated DA (CDA) model exposes one Gibbs sweep under working
parameters ``(r, b)``. That sweep is used as a Metropolis-Hastings proposal;
because the sweep is reversible with respect to the calibrated posterior,
the acceptance ratio collapses to

    L(theta*) L_rb(theta) / (L(theta) L_rb(theta*))

and the prior and latent densities never need evaluating. ``(r, b)`` adapt
from the current state during a tuning phase and are then frozen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .dist import RngStream, as_generator, fsum
from .errors import ChainError, InvariantViolation, ParameterError

SAMPLER_KINDS = ("da", "cda", "cda_gibbs", "mh_mvn")


def properness_floor(y, k, epsilon):
    """Smallest admissible ``r`` for a PG shape of ``k * r`` with count ``y``.

    ``k * r >= y - 1 + epsilon``; ``epsilon`` is on the scale of the total
    Polya-Gamma shape, so it stays meaningful when ``k`` is huge.
    """
    return (np.asarray(y, dtype=float) - 1.0 + epsilon) / np.asarray(k, dtype=float)


@dataclass
class CalibrationParams:
    """Working parameters: scale ``r`` and location ``b``, per observation or
    shared (length 1)."""

    r: np.ndarray
    b: np.ndarray
    epsilon: float = 1e-6
    frozen: bool = False

    def __post_init__(self):
        self.r = np.atleast_1d(np.asarray(self.r, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.r.shape != self.b.shape:
            raise ParameterError(f"r shape {self.r.shape} != b shape {self.b.shape}")
        if np.any(~(self.r > 0.0)) or np.any(~np.isfinite(self.r)):
            raise ParameterError("calibration r must be positive and finite")
        if np.any(~np.isfinite(self.b)):
            raise ParameterError("calibration b must be finite")
        if self.frozen:
            self.r.setflags(write=False)
            self.b.setflags(write=False)

    @classmethod
    def identity(cls, size: int = 1, epsilon: float = 1e-6) -> "CalibrationParams":
        return cls(np.ones(size), np.zeros(size), epsilon)

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.r == 1.0) and np.all(self.b == 0.0))

    def freeze(self) -> "CalibrationParams":
        return CalibrationParams(self.r.copy(), self.b.copy(), self.epsilon, frozen=True)


@dataclass
class ChainState:
    theta: np.ndarray
    latents: Any = None
    hypers: dict = field(default_factory=dict)
    cond_var: np.ndarray | None = None


@dataclass
class Proposal:
    theta: np.ndarray
    latents: Any
    cond_var: np.ndarray
    context: Any = None


@dataclass
class SamplerConfig:
    n_iter: int = 2000
    n_burn: int = 200
    n_adapt: int = 200
    seed: int = 0
    sampler_kind: str = "cda"
    lam: float = 1e9
    subsample_frac: float = 0.01
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.sampler_kind not in SAMPLER_KINDS:
            raise ParameterError(f"unknown sampler kind {self.sampler_kind!r}; expected one of {SAMPLER_KINDS}")
        if not 0 <= self.n_adapt <= self.n_burn <= self.n_iter:
            raise ParameterError("need 0 <= n_adapt <= n_burn <= n_iter")
        if self.n_iter == self.n_burn:
            raise ParameterError("n_iter must exceed n_burn so the trace is non-empty")


@dataclass
class Trace:
    """Post-burn-in output of one chain.

    ``accepted`` holds the fraction of accepted blocks per iteration (0 or 1
    for a jointly updated parameter, a proportion for per-unit acceptance).
    ``log_ratio`` is the MH log ratio, averaged over blocks when there are
    several, and NaN for samplers without an acceptance step. The
    ``adapt_*`` arrays cover every iteration, burn-in included.
    """

    theta_samples: np.ndarray
    accepted: np.ndarray
    log_ratio: np.ndarray
    cond_var: np.ndarray
    hyper_samples: dict
    wall_times: dict
    coord_names: list
    accept_rate_adapt: float
    accept_rate_frozen: float
    adapt_mean_log_r: np.ndarray
    adapt_mean_b: np.ndarray
    adapt_accept: np.ndarray
    calibration: CalibrationParams
    snapshot: dict | None = None

    @property
    def n_samples(self) -> int:
        return self.theta_samples.shape[0]

    @property
    def wall_time(self) -> float:
        return float(sum(self.wall_times.values()))


class CdaModel:
    """Interface each model implements.

    ``propose`` runs one calibrated Gibbs sweep. ``log_accept_ratio`` returns
    the calibrated MH log ratio either as a float (joint update) or as one value
    per unit when ``unit_blocks`` is true and units are accepted separately.
    """

    unit_blocks = False
    n_calib = 1

    def init_state(self, rng) -> ChainState:
        raise NotImplementedError

    def identity_calibration(self, epsilon: float = 1e-6) -> CalibrationParams:
        return CalibrationParams.identity(self.n_calib, epsilon)

    def propose(self, state: ChainState, calib: CalibrationParams, rng) -> Proposal:
        raise NotImplementedError

    def log_accept_ratio(self, state: ChainState, proposal: Proposal, calib: CalibrationParams):
        raise NotImplementedError

    def log_target(self, theta) -> float:
        raise NotImplementedError

    def log_proposal_marginal(self, theta, calib: CalibrationParams) -> float:
        raise NotImplementedError

    def calibrate(self, state: ChainState, calib: CalibrationParams) -> CalibrationParams:
        raise NotImplementedError

    def floor(self, calib: CalibrationParams) -> np.ndarray:
        return np.zeros_like(calib.r)

    def update_hypers(self, state: ChainState, rng) -> ChainState:
        return state

    def accept(self, state: ChainState, proposal: Proposal, accepted) -> ChainState:
        if self.unit_blocks:
            theta = np.where(accepted, proposal.theta, state.theta)
        else:
            theta = proposal.theta if accepted else state.theta
        return replace(state, theta=theta, latents=proposal.latents, cond_var=proposal.cond_var)

    def adaptation_snapshot(self, state: ChainState, calib: CalibrationParams) -> dict | None:
        return None

    @property
    def coord_names(self) -> list:
        raise NotImplementedError


def calibrated_log_ratio(target_cur, target_new, prop_cur, prop_new, per_unit=False):
    """Combine per-observation log terms into the calibrated MH log ratio.

    Differences are formed per observation before summing, and the sum is
    exactly rounded, so totals over ~1e8 terms do not cancel catastrophically.
    """
    target_cur = np.asarray(target_cur, dtype=float)
    if not np.all(np.isfinite(target_cur)):
        raise InvariantViolation("non-finite log-likelihood at the current state")
    if np.any(np.isnan(target_new)) or np.any(np.isposinf(target_new)):
        raise InvariantViolation("proposal log-likelihood is NaN or +inf")
    with np.errstate(invalid="ignore"):
        diff = (np.asarray(target_new) - target_cur) - (np.asarray(prop_new) - np.asarray(prop_cur))
    diff = np.where(np.isneginf(target_new), -np.inf, diff)
    if per_unit:
        return diff
    if np.any(np.isneginf(diff)):
        return -np.inf
    return fsum(diff)


def cda_mh_step(state: ChainState, model: CdaModel, calib: CalibrationParams, rng,
                accept_rng=None, correct: bool = True):
    """One calibrated Gibbs proposal followed by the MH accept/reject.

    Latents from the sweep are kept whether or not theta moves; they are
    proposal scaffolding rather than part of the target. Returns
    ``(state, accepted, log_ratio)``; ``accepted`` is a bool, or a boolean
    array when the model accepts units separately.
    """
    gen = as_generator(rng)
    agen = gen if accept_rng is None else as_generator(accept_rng)
    if getattr(model, "scan", "joint") == "blockwise":
        return model.blockwise_step(state, calib, gen, agen, correct)
    proposal = model.propose(state, calib, gen)
    if not correct:
        accepted = np.ones(proposal.theta.shape, bool) if model.unit_blocks else True
        return model.accept(state, proposal, accepted), accepted, np.nan
    log_ratio = model.log_accept_ratio(state, proposal, calib)
    if model.unit_blocks:
        u = agen.random(np.shape(log_ratio))
        accepted = np.log(u) < log_ratio
    else:
        accepted = bool(np.log(agen.random()) < log_ratio)
    return model.accept(state, proposal, accepted), accepted, log_ratio


def adapt_calibration(model: CdaModel, state: ChainState, calib_t: CalibrationParams) -> CalibrationParams:
    """Fisher-matching update of ``(r, b)`` at the current state.

    The model computes ``r`` from the previous ``b`` and then ``b`` from the
    new ``r``; one pass per call, no inner iteration.
    """
    if calib_t.frozen:
        raise ParameterError("calibration is frozen")
    new = model.calibrate(state, calib_t)
    floor = model.floor(new)
    if np.any(new.r < floor * (1.0 - 1e-12)):
        raise InvariantViolation("calibration r fell below its properness floor")
    return new


def run_chain(model: CdaModel, config: SamplerConfig, rng=None, *, init_calib=None,
              init_state=None, record_hypers=True) -> Trace:
    """Run one chain: adapt for ``n_adapt`` iterations, freeze, keep samples
    after ``n_burn``.

    ``init_calib`` fixes the starting working parameters (e.g. a hand-set
    ``r``); with ``n_adapt = 0`` they stay fixed for the whole run.
    """
    stream = rng if rng is not None else RngStream(config.seed)
    if not isinstance(stream, RngStream):
        raise TypeError("run_chain needs an RngStream so it can derive substreams")
    gen = stream.substream(0).generator
    accept_gen = stream.substream(1).generator
    kind = config.sampler_kind

    if kind == "da":
        calib = model.identity_calibration(config.epsilon).freeze()
    else:
        calib = init_calib if init_calib is not None else model.identity_calibration(config.epsilon)
        if config.n_adapt == 0 and not calib.frozen:
            calib = calib.freeze()
    adapting = kind in ("cda", "cda_gibbs") and not calib.frozen

    state = init_state if init_state is not None else model.init_state(gen)
    n_keep = config.n_iter - config.n_burn
    p = len(model.coord_names)
    theta_out = np.empty((n_keep, p))
    cond_out = np.full((n_keep, p), np.nan)
    acc_out = np.empty(n_keep)
    lr_out = np.empty(n_keep)
    hyper_out: dict[str, np.ndarray] = {}
    adapt_log_r = np.empty(config.n_iter)
    adapt_b = np.empty(config.n_iter)
    adapt_acc = np.empty(config.n_iter)
    times = {"adapt": 0.0, "burn": 0.0, "sample": 0.0}
    snapshot = None

    for t in range(config.n_iter):
        t0 = time.perf_counter()
        adapt_log_r[t] = float(np.mean(np.log(calib.r)))
        adapt_b[t] = float(np.mean(calib.b))
        try:
            if kind == "mh_mvn":
                state, accepted, log_ratio = model.mh_mvn_step(state, gen, accept_gen)
            else:
                correct = kind == "cda"
                state, accepted, log_ratio = cda_mh_step(state, model, calib, gen, accept_gen, correct)
            state = model.update_hypers(state, gen)
            if adapting and t < config.n_adapt:
                calib = adapt_calibration(model, state, calib)
            if adapting and t + 1 == config.n_adapt:
                calib = calib.freeze()
                snapshot = model.adaptation_snapshot(state, calib)
        except (ChainError, KeyboardInterrupt):
            raise
        except Exception as exc:
            raise ChainError(t, exc) from exc
        acc = float(np.mean(accepted))
        lr = float(np.mean(log_ratio)) if np.ndim(log_ratio) else float(log_ratio)
        adapt_acc[t] = acc
        k = t - config.n_burn
        if k >= 0:
            theta_out[k] = state.theta
            if state.cond_var is not None:
                cond_out[k] = state.cond_var
            acc_out[k] = acc
            lr_out[k] = lr
            if record_hypers:
                for name, value in state.hypers.items():
                    hyper_out.setdefault(name, np.empty(n_keep))[k] = value
        phase = "adapt" if t < config.n_adapt else ("burn" if t < config.n_burn else "sample")
        times[phase] += time.perf_counter() - t0

    acc_adapt = float(np.mean(adapt_acc[: config.n_adapt])) if config.n_adapt else float("nan")
    return Trace(
        theta_samples=theta_out,
        accepted=acc_out,
        log_ratio=lr_out,
        cond_var=cond_out,
        hyper_samples=hyper_out,
        wall_times=times,
        coord_names=list(model.coord_names),
        accept_rate_adapt=acc_adapt,
        accept_rate_frozen=float(np.mean(adapt_acc[config.n_adapt:])),
        adapt_mean_log_r=adapt_log_r,
        adapt_mean_b=adapt_b,
        adapt_accept=adapt_acc,
        calibration=calib,
        snapshot=snapshot,
    )
