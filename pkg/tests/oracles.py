"""Independent numerical references used by the tests.

Nothing here calls the samplers' own likelihood or proposal code.
"""

import math
import warnings

import numpy as np
from scipy import integrate, special


def _log_trunc_normal_cf(t, mu, sd):
    """log E exp(i t Z) for Z ~ N(mu, sd^2) restricted to (0, inf), written
    through the Faddeeva function so it stays finite deep in the tails."""
    a = mu / sd
    w = special.wofz((sd * t - 1j * a) / math.sqrt(2.0))
    return np.log(0.5 * w) - 0.5 * a * a - special.log_ndtr(a)


def probit_intercept_kernel_density(theta_from, theta_to, n_ones, n_zeros, r, b):
    """Density of the calibrated probit DA kernel Q(theta_from -> theta_to)
    for intercept-only data, by Fourier inversion.

    The sweep draws z_i ~ N(theta + b, r) truncated to the side of y_i and
    then theta' + b ~ N(mean z, r/n), so theta' + b is the mean of n
    truncated normals plus independent Gaussian noise.
    """
    n = n_ones + n_zeros
    mu, sd = theta_from + b, math.sqrt(r)
    u = theta_to + b

    def integrand(t):
        s = t / n
        log_cf = (n_ones * _log_trunc_normal_cf(s, mu, sd)
                  + n_zeros * _log_trunc_normal_cf(-s, -mu, sd)
                  - 0.5 * (r / n) * t * t)
        return float(np.real(np.exp(log_cf - 1j * t * u)))

    upper = math.sqrt(2.0 * n * 60.0 / r)
    with warnings.catch_warnings():
        # quad flags roundoff at this tolerance; normalisation checks to 1e-14 regardless
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(integrand, 0.0, upper, limit=2000, epsabs=1e-14, epsrel=1e-12)
    return val / math.pi


def probit_intercept_loglik(theta, n_ones, n_zeros):
    return n_ones * special.log_ndtr(theta) + n_zeros * special.log_ndtr(-theta)


def pg_density(x, b, c, terms=200):
    """PG(b, c) density from its alternating series at c = 0, then
    exponentially tilted by cosh(c/2)^b exp(-c^2 x / 2)."""
    n = np.arange(terms)
    log_coef = special.gammaln(n + b) - special.gammaln(n + 1.0) + np.log(2.0 * n + b)
    log_terms = log_coef - (2.0 * n + b) ** 2 / (8.0 * x) - 1.5 * math.log(x) - 0.5 * math.log(2.0 * math.pi)
    signs = np.where(n % 2 == 0, 1.0, -1.0)
    top = log_terms.max()
    series = math.fsum(signs * np.exp(log_terms - top))
    log_f = (b - 1.0) * math.log(2.0) - special.gammaln(b) + top + math.log(max(series, 1e-300))
    tilt = b * math.log(math.cosh(0.5 * c)) - 0.5 * c * c * x
    return math.exp(log_f + tilt)


def _pg_window(shape, tilt):
    """Integration window [0, mean + 60 sd] for PG(shape, tilt)."""
    c = max(abs(tilt), 1e-6)
    mean = shape / (2 * c) * math.tanh(c / 2)
    var = shape / (4 * c**3) * (math.sinh(c) - c) / math.cosh(c / 2) ** 2
    return mean, mean + 60.0 * math.sqrt(var)


def poisson_single_kernel_density(tau_from, tau_to, y, r, b, lam, tau0, nu2):
    """Calibrated one-unit Poisson kernel Q(tau_from -> tau_to): mixes the
    Gaussian conditional of tau over z ~ PG(r lam, tau_from - log lam + b).

    The alternating series for the PG density cancels badly at large shape
    or small tilt, so the density's normalisation is checked first and the
    oracle refuses to answer when it is off by more than 1e-8.
    """
    shape, tilt, log_lam = r * lam, tau_from - math.log(lam) + b, math.log(lam)
    mid, hi = _pg_window(shape, tilt)
    quad = dict(points=[mid], limit=1000, epsabs=0.0, epsrel=1e-10)

    def integrand(z):
        a = z + 1.0 / nu2
        mean = (y - 0.5 * shape + z * (log_lam - b) + tau0 / nu2) / a
        return pg_density(z, shape, tilt) * math.sqrt(a / (2 * math.pi)) * math.exp(-0.5 * a * (tau_to - mean) ** 2)

    with warnings.catch_warnings():
        # series noise near 1e-10 trips quad's roundoff flag; the mass check below bounds it
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        norm = integrate.quad(lambda z: pg_density(z, shape, tilt), 0.0, hi, **quad)[0]
        if abs(norm - 1.0) > 1e-8:
            raise ArithmeticError(f"PG({shape:.3g}, {tilt:.3g}) series not accurate: mass {norm!r}")
        return integrate.quad(integrand, 0.0, hi, **quad)[0]


def poisson_single_log_posterior(tau, y, tau0, nu2):
    return y * tau - math.exp(tau) - 0.5 * (tau - tau0) ** 2 / nu2
