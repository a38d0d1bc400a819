import math

import numpy as np
import pytest

from cdamcmc.binomial import (
    HierBinomialData,
    HierBinomialModel,
    binomial_calibrate,
    binomial_loglik_terms,
    generate_hier_binomial_data,
    hier_binomial_hyper_update,
    hier_binomial_unit_step,
)
from cdamcmc.diagnostics import mc_standard_error
from cdamcmc.dist import RngStream
from cdamcmc.errors import ParameterError
from cdamcmc.mcmc import CalibrationParams, ChainState, SamplerConfig, run_chain

# mpmath, 40 digits: one calibration pass at theta = -12 from b = 0
CAL_M12_R = 1.4746109648544389e-4
CAL_M12_B = 8.8428487033185739


def test_calibration_oracle_large_trials():
    data = HierBinomialData(np.array([0.0]), np.array([1e6]))
    cal = binomial_calibrate(np.array([-12.0]), 0.0, data)
    assert cal.r[0] == pytest.approx(CAL_M12_R, rel=1e-12)
    assert cal.b[0] == pytest.approx(CAL_M12_B, rel=1e-12)


def test_calibration_floor_per_unit():
    data = HierBinomialData(np.array([50.0, 0.0]), np.array([100.0, 100.0]))
    cal = binomial_calibrate(np.array([-12.0, -12.0]), 0.0, data)
    assert cal.r[0] == pytest.approx((49.0 + 1e-6) / 100.0)
    assert cal.r[1] == pytest.approx(CAL_M12_R, rel=1e-12)


def test_calibrated_terms_match_at_adaptation_point():
    data = HierBinomialData(np.array([0.0, 2.0, 30.0]), np.array([1e6, 1e4, 100.0]))
    theta = np.array([-12.0, -8.0, -1.0])
    cal = binomial_calibrate(theta, 0.0, data)
    exact = binomial_loglik_terms(theta, data)
    calibrated = binomial_loglik_terms(theta, data, cal)
    # the b-identity matches the log(1+e) parts; the y terms differ by y b
    assert np.allclose(calibrated - data.y * cal.b, exact, rtol=1e-10)


def test_data_validation():
    with pytest.raises(ParameterError):
        HierBinomialData([1.0], [0.0])
    with pytest.raises(ParameterError):
        HierBinomialData([3.0], [2.0])
    with pytest.raises(ParameterError):
        HierBinomialModel(HierBinomialData(np.zeros(3), np.ones(3)))


def test_hyper_update_conditional_moments():
    gen = np.random.default_rng(0)
    n = 50
    theta = gen.normal(-10.0, 2.0, n)
    data = HierBinomialData(np.zeros(n), np.ones(n), prior_mean_loc=-12.0, prior_var_loc=49.0)
    state = ChainState(theta, hypers={"theta0": -10.0, "sigma2": 4.0})
    draws = np.array([hier_binomial_hyper_update(state, data, gen) for _ in range(20000)])
    prec = n / 4.0 + 1 / 49.0
    mean = (theta.sum() / 4.0 - 12.0 / 49.0) / prec
    assert draws[:, 0].mean() == pytest.approx(mean, abs=4 / math.sqrt(prec * 20000))
    assert draws[:, 0].var() == pytest.approx(1 / prec, rel=0.05)
    assert np.all(draws[:, 1] > 0)


def test_unit_decisions_independent_of_order():
    data, _ = generate_hier_binomial_data(20, RngStream(1))
    state = ChainState(np.full(20, data.pooled_logit), hypers={"theta0": -12.0, "sigma2": 5.0})
    cal = binomial_calibrate(state.theta, 0.0, data)

    def run(order):
        out = {}
        for i in order:
            out[i] = hier_binomial_unit_step(i, state, data, cal, RngStream(9, i), RngStream(10, i))
        return out

    forward = run(range(20))
    backward = run(reversed(range(20)))
    assert forward == backward


def test_unit_step_rejects_below_floor():
    data = HierBinomialData(np.array([5.0] * 5), np.array([10.0] * 5))
    state = ChainState(np.zeros(5), hypers={"theta0": 0.0, "sigma2": 1.0})
    with pytest.raises(ParameterError):
        hier_binomial_unit_step(0, state, data, CalibrationParams(np.full(5, 0.1), np.zeros(5)), RngStream(0))


def test_generator_shapes():
    data, theta = generate_hier_binomial_data(100, RngStream(2))
    assert data.n == 100 and theta.shape == (100,)
    assert np.all(data.N >= 1) and np.all(data.y <= data.N)


def test_cda_matches_long_da_on_theta0():
    # moderate rates, so plain DA mixes well enough to act as the reference
    data, _ = generate_hier_binomial_data(200, RngStream(3), loc=-3.0, var=1.0, log_trials_mean=3.0,
                                          log_trials_sd=0.5)
    data = HierBinomialData(data.y, data.N, prior_mean_loc=-3.0, prior_var_loc=49.0)
    model = HierBinomialModel(data)
    da = run_chain(model, SamplerConfig(n_iter=8000, n_burn=1000, n_adapt=0, sampler_kind="da"), RngStream(4))
    cda = run_chain(model, SamplerConfig(n_iter=3000, n_burn=300, n_adapt=100), RngStream(5))
    a, b = da.hyper_samples["theta0"], cda.hyper_samples["theta0"]
    se = math.hypot(mc_standard_error(a), mc_standard_error(b))
    assert abs(a.mean() - b.mean()) < 3 * se


def test_da_underestimates_spread_on_rare_events():
    data, _ = generate_hier_binomial_data(500, RngStream(6))
    model = HierBinomialModel(data)
    cda = run_chain(model, SamplerConfig(n_iter=1200, n_burn=200, n_adapt=100), RngStream(7))
    # give DA the same wall time as CDA
    probe = run_chain(model, SamplerConfig(n_iter=200, n_burn=100, n_adapt=0, sampler_kind="da"), RngStream(8))
    n_da = max(200, int(200 * cda.wall_time / probe.wall_time))
    da = run_chain(model, SamplerConfig(n_iter=n_da, n_burn=n_da // 6, n_adapt=0, sampler_kind="da"), RngStream(8))
    assert da.hyper_samples["sigma2"].mean() < cda.hyper_samples["sigma2"].mean()
