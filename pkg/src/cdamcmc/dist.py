"""Random variates and numerically stable special functions.

Everything here is a pure function of its arguments and a random stream.
Samplers take either an :class:`RngStream` or a ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import linalg, special

from .errors import NumericalError, ParameterError

# Standardized lower bound above which the exponential-proposal rejection
# sampler replaces inverse-CDF sampling.
TAIL_SWITCH = 3.0

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Two streams with the same identifiers produce identical draws; distinct
    ``stream_id`` values go through ``SeedSequence`` spawn keys and are
    statistically independent.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ParameterError("seed and stream_id must be non-negative")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, k: int) -> "RngStream":
        """Independent child stream ``k``; does not advance this stream."""
        return RngStream(self.seed, self.stream_id, (*self.path, int(k)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# ---------------------------------------------------------------------------
# special functions


def normal_cdf(x):
    return special.ndtr(x)


def normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
        raise ParameterError("normal_quantile requires p in (0, 1)")
    out = special.ndtri(p)
    return out.item() if out.ndim == 0 else out


def log_normal_cdf(x):
    return special.log_ndtr(x)


def normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def log1p_exp(x):
    """``log(1 + exp(x))`` without overflow for large ``x`` or underflow loss
    for very negative ``x``."""
    return np.logaddexp(0.0, x)


def log_expm1(x):
    """``log(exp(x) - 1)`` for ``x > 0``, stable for tiny and huge ``x``."""
    x = np.asarray(x, dtype=float)
    big = x > 30.0
    safe = np.where(big, 1.0, x)
    out = np.where(big, x + np.log1p(-np.exp(-np.where(big, x, 30.0))), np.log(np.expm1(safe)))
    return out.item() if out.ndim == 0 else out


def pg_tilt_factor(c):
    """``tanh(c/2) / (2c)`` with its ``c -> 0`` limit of 1/4.

    This is the mean of PG(1, c) and also the per-unit Fisher information
    the Polya-Gamma augmentation carries at tilt ``c``.
    """
    c = np.abs(np.asarray(c, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(c < 1e-6, 0.25 - c * c / 48.0, np.tanh(0.5 * c) / (2.0 * c))
    return out.item() if out.ndim == 0 else out


def fsum(terms) -> float:
    """Exactly rounded sum; used wherever many log-terms are combined."""
    return math.fsum(np.asarray(terms, dtype=float).ravel())


# ---------------------------------------------------------------------------
# truncated normal


def _check_interval(lower, upper):
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower >= upper):
        raise ParameterError("truncation interval requires lower < upper")


def _exp_rejection(a, b, gen):
    """Standard normal restricted to ``[a, b]`` with ``a >= TAIL_SWITCH``,
    by rejection from a translated exponential truncated to the interval."""
    out = np.empty_like(a)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    # mass of the exponential proposal inside [a, b]; 1 when b is infinite
    width_mass = -np.expm1(-lam * (b - a))
    todo = np.arange(a.size)
    while todo.size:
        u = gen.random(todo.size)
        x = a[todo] - np.log1p(-u * width_mass[todo]) / lam[todo]
        v = gen.random(todo.size)
        ok = np.log(v) <= -0.5 * (x - lam[todo]) ** 2
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


@njit(cache=True)
def _lower_trunc_kernel(gen, lo, out):
    """Standard normal on ``[lo_i, inf)``: naive rejection for lo_i < 0.5,
    otherwise the optimal translated-exponential proposal."""
    for i in range(lo.size):
        a = lo[i]
        if a < 0.5:
            x = gen.standard_normal()
            while x < a:
                x = gen.standard_normal()
        else:
            lam = 0.5 * (a + math.sqrt(a * a + 4.0))
            while True:
                x = a + gen.standard_exponential() / lam
                if math.log(gen.random()) <= -0.5 * (x - lam) * (x - lam):
                    break
        out[i] = x


def _std_trunc_normal(a, b, gen):
    """Standard normal restricted to ``[a, b]`` elementwise (arrays)."""
    flip = (b <= 0.0) | np.isneginf(a)
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    x = np.empty_like(lo)
    one_sided = np.isposinf(hi)
    if one_sided.all():
        _lower_trunc_kernel(gen, np.ascontiguousarray(lo), x)
        x = np.where(flip, -x, x)
        return np.clip(x, np.nextafter(a, np.inf), np.nextafter(b, -np.inf))

    tail = lo >= TAIL_SWITCH
    if tail.any():
        x[tail] = _exp_rejection(lo[tail], hi[tail], gen)

    pos = ~tail & (lo >= 0.0)
    if pos.any():
        # invert the survival function, which keeps precision for lo > 0
        s_lo = special.ndtr(-lo[pos])
        s_hi = special.ndtr(-hi[pos])
        u = gen.random(s_lo.size)
        x[pos] = -special.ndtri(s_lo - u * (s_lo - s_hi))

    # one-sided with at least half the mass inside: plain rejection is cheaper
    # than two special-function calls per draw
    easy = ~tail & ~pos & np.isposinf(hi) & (lo <= 0.0)
    if easy.any():
        idx = np.flatnonzero(easy)
        while idx.size:
            draw = gen.standard_normal(idx.size)
            ok = draw >= lo[idx]
            x[idx[ok]] = draw[ok]
            idx = idx[~ok]

    mid = ~tail & ~pos & ~easy
    if mid.any():
        c_lo = special.ndtr(lo[mid])
        c_hi = special.ndtr(hi[mid])
        u = gen.random(c_lo.size)
        x[mid] = special.ndtri(c_lo + u * (c_hi - c_lo))

    x = np.where(flip, -x, x)
    # rounding in ndtri can land exactly on a bound
    return np.clip(x, np.nextafter(a, np.inf), np.nextafter(b, -np.inf))


def sample_truncated_normal(mu, var, lower, upper, rng, size=None):
    """Draw from N(mu, var) restricted to ``[lower, upper]``.

    Arguments broadcast against each other. Bounds may be infinite. Means far
    outside the interval are handled by exponential rejection in the tail, so
    there is no stall when ``mu`` sits many standard deviations away.
    """
    gen = as_generator(rng)
    mu, var, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mu, var, lower, upper))
    )
    if size is not None:
        mu, var, lower, upper = (np.broadcast_to(v, size) for v in (mu, var, lower, upper))
    if np.any(~(var > 0.0)):
        raise ParameterError("truncated normal variance must be positive")
    _check_interval(lower, upper)
    sd = np.sqrt(var)
    with np.errstate(invalid="ignore"):
        a = np.where(np.isneginf(lower), -np.inf, (lower - mu) / sd).ravel()
        b = np.where(np.isposinf(upper), np.inf, (upper - mu) / sd).ravel()
    z = _std_trunc_normal(a, b, gen).reshape(mu.shape)
    out = mu + sd * z
    out = np.clip(out, np.nextafter(lower, np.inf), np.nextafter(upper, -np.inf))
    return out.item() if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# gamma family and Gaussians


def sample_inverse_gamma(shape, rate, rng, size=None):
    """IG(shape, rate): the reciprocal of a Gamma(shape, rate) variate."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(shape > 0.0)) or np.any(~(rate > 0.0)):
        raise ParameterError("inverse gamma requires shape > 0 and rate > 0")
    gen = as_generator(rng)
    out = rate / gen.standard_gamma(shape, size=size)
    return out.item() if np.ndim(out) == 0 else out


def cholesky_precision(precision, where="precision"):
    try:
        return np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        dim = np.shape(precision)[0]
        raise NumericalError(f"precision matrix not positive definite: {exc}", f"{where}, dim={dim}") from None


def sample_mvn_from_precision(precision, linear, rng, return_moments=False):
    """Draw from N(P^{-1} h, P^{-1}) using one Cholesky factorization of P.

    With ``return_moments`` the mean and the diagonal of ``P^{-1}`` are
    returned as well, as ``(draw, mean, cov_diag)``.
    """
    P = np.atleast_2d(np.asarray(precision, dtype=float))
    h = np.atleast_1d(np.asarray(linear, dtype=float))
    if P.shape != (h.size, h.size):
        raise ParameterError(f"precision shape {P.shape} does not match linear term {h.shape}")
    L = cholesky_precision(P)
    mean = linalg.cho_solve((L, True), h)
    eps = as_generator(rng).standard_normal(h.size)
    draw = mean + linalg.solve_triangular(L.T, eps, lower=False)
    if not return_moments:
        return draw
    Linv = linalg.solve_triangular(L, np.eye(h.size), lower=True)
    return draw, mean, np.sum(Linv * Linv, axis=0)
