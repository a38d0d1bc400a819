import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdamcmc.diagnostics import ess
from cdamcmc.dist import RngStream, log1p_exp
from cdamcmc.errors import InvariantViolation, ParameterError
from cdamcmc.mcmc import CalibrationParams, ChainState, SamplerConfig, run_chain
from cdamcmc.poisson import (
    PoissonData,
    PoissonLogNormalModel,
    block_gaussian_draw,
    dense_gaussian_moments,
    generate_poisson_data,
    nb_approx_loglik,
    nb_loglik_terms,
    poisson_blockwise_step,
    poisson_calibrate,
    poisson_loglik_terms,
    predict_holdout,
)

# mpmath, 40 digits: one calibration pass at eta = 5, lambda = 1e9, from b = 0
CAL_5_R = 4.667080493853784e-6
CAL_5_B = 12.290918978274439
# lambda log1p(e^10 / lambda) - e^10 at lambda = 1e9
NB_GAP_10 = -0.24257903560554658
# 30 - 2 (30 + log1p(e^-30))
NB_R2_AT_30 = -30.000000000000187


def gaussian_problem(n, p, seed):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(n, p))
    z = gen.gamma(2.0, 1.0, n)
    return X, z, gen.normal(size=n), gen.normal(size=p)


def structured_mean(X, z, lt, lb, nu2, s2):
    # the draw is affine in the linear terms with the same noise, so the
    # difference of two seeded draws is the conditional mean
    t1, b1, cv = block_gaussian_draw(X, z, lt, lb, nu2, s2, np.random.default_rng(0))
    t0, b0, _ = block_gaussian_draw(X, z, 0 * lt, 0 * lb, nu2, s2, np.random.default_rng(0))
    return np.concatenate([t1 - t0, b1 - b0]), cv


@pytest.mark.parametrize("n,p", [(10, 1), (30, 3), (50, 2)])
def test_structured_solve_matches_dense(n, p):
    X, z, lt, lb = gaussian_problem(n, p, n + p)
    mean, cond_var = structured_mean(X, z, lt, lb, 0.7, 100.0)
    dense_mean, cov = dense_gaussian_moments(X, z, lt, lb, 0.7, 100.0)
    assert np.allclose(mean, dense_mean, rtol=1e-8, atol=1e-10)
    assert np.allclose(cond_var, np.diag(cov), rtol=1e-8, atol=1e-12)


def test_structured_draw_covariance():
    X, z, lt, lb = gaussian_problem(4, 2, 1)
    _, cov = dense_gaussian_moments(X, z, lt, lb, 0.7, 100.0)
    gen = np.random.default_rng(5)
    draws = np.array([np.concatenate(block_gaussian_draw(X, z, lt, lb, 0.7, 100.0, gen, False)[:2])
                      for _ in range(40000)])
    assert np.allclose(np.cov(draws.T), cov, atol=0.03 * np.max(np.abs(cov)))


def test_scalar_case_without_covariates():
    z, lt = np.array([2.0]), np.array([1.5])
    tau, beta, cv = block_gaussian_draw(np.empty((1, 0)), z, lt, np.empty(0), 0.5, 100.0, np.random.default_rng(0))
    assert beta.size == 0
    assert cv == pytest.approx([1 / (2.0 + 2.0)])


def test_calibration_oracle():
    cal = poisson_calibrate(5.0, 0.0, lam=1e9)
    assert cal.r[0] == pytest.approx(CAL_5_R, rel=1e-12)
    assert cal.b[0] == pytest.approx(CAL_5_B, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(eta=st.floats(-10, 12), b_prev=st.floats(-20, 30))
def test_b_identity(eta, b_prev):
    lam = 1e9
    cal = poisson_calibrate(eta, b_prev, lam=lam)
    lhs = cal.r[0] * lam * log1p_exp(eta + cal.b[0] - math.log(lam))
    assert abs(lhs - math.exp(eta)) / math.exp(eta) < 1e-8


def test_floor_applies_with_counts():
    cal = poisson_calibrate(np.array([-5.0]), 0.0, lam=1e9, y=np.array([40.0]))
    assert cal.r[0] == pytest.approx((39.0 + 1e-6) / 1e9)


def test_literal_formula_needs_tau():
    with pytest.raises(ParameterError):
        poisson_calibrate(1.0, 0.0, literal_tau_formula=True)
    a = poisson_calibrate(1.0, 0.0, tau=[2.0], literal_tau_formula=True)
    assert a.r[0] == pytest.approx(2.0 * poisson_calibrate(1.0, 0.0).r[0])


def test_nb_gap_oracle():
    gap = nb_loglik_terms(np.array([10.0]), np.array([0.0]), 1e9) - poisson_loglik_terms(np.array([10.0]), 0.0)
    assert -gap[0] == pytest.approx(NB_GAP_10, rel=1e-8)
    assert abs(gap[0]) <= math.exp(20) / 2e9


def test_nb_terms_large_argument():
    out = nb_loglik_terms(np.array([30.0]), np.array([1.0]), 1.0, CalibrationParams([2.0], [0.0]))
    assert out[0] == pytest.approx(NB_R2_AT_30, rel=1e-15)


def test_overflow_guard():
    with pytest.raises(InvariantViolation):
        poisson_loglik_terms(np.array([701.0]), np.array([1.0]))


def test_improper_calibration_rejected():
    with pytest.raises(ParameterError):
        nb_approx_loglik([0.0], [10.0], 1e9, CalibrationParams([1e-9], [0.0]))


def test_model_validation():
    d = PoissonData(np.zeros((10, 1)), np.ones(10))
    with pytest.raises(ParameterError):
        PoissonLogNormalModel(d, lam=10.0)
    with pytest.raises(ParameterError):
        PoissonLogNormalModel(d, scan="random")
    with pytest.raises(ParameterError):
        PoissonData(np.zeros((2, 1)), [1.5, 2.0])


def test_blockwise_step_shapes_and_stays_finite():
    data, _, _ = generate_poisson_data(20, 2, RngStream(0), beta=np.array([0.5, -0.5]))
    model = PoissonLogNormalModel(data, scan="blockwise")
    state = model.init_state(None)
    cal = model.calibrate(state, model.identity_calibration())
    new, acc, lr = poisson_blockwise_step(state, data, cal, RngStream(1), RngStream(2))
    assert acc.shape == (21,) and lr.shape == (21,)
    assert np.all(np.isfinite(new.theta))
    # rejected units keep their old tau
    keep = ~acc[:20]
    assert np.array_equal(new.theta[:20][keep], state.theta[:20][keep])


def test_blocked_mixes_better_than_alternating():
    data, _, _ = generate_poisson_data(50, 2, RngStream(0), beta=np.array([1.0, 0.5]), nu2=0.5)
    # shifting the covariates away from zero confounds tau with beta
    data = PoissonData(data.X + 2.0, data.y)
    cfg = SamplerConfig(n_iter=3000, n_burn=500, n_adapt=0, sampler_kind="da")
    ess_beta1 = {}
    for blocked in (True, False):
        tr = run_chain(PoissonLogNormalModel(data, blocked=blocked), cfg, RngStream(1))
        ess_beta1[blocked] = ess(tr.theta_samples[:, 50])
    assert ess_beta1[True] / ess_beta1[False] > 1.0


def test_holdout_prediction():
    data, hold, truth = generate_poisson_data(30, 1, RngStream(3))
    theta = np.concatenate([truth["tau"], truth["beta"]])[None, :]
    pred = predict_holdout(np.repeat(theta, 3, axis=0), hold)
    assert pred == pytest.approx(np.exp(truth["tau"] + hold.X @ truth["beta"]))
