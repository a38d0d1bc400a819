import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from cdamcmc.data import BinaryData
from cdamcmc.dist import RngStream
from cdamcmc.errors import ParameterError
from cdamcmc.mcmc import CalibrationParams, ChainState, SamplerConfig, run_chain
from cdamcmc.probit import (
    ProbitModel,
    intercept_calibration,
    probit_calibrate,
    probit_cda_loglik,
    probit_cda_propose,
    probit_da_update,
)

ETA_GRID = np.linspace(-12.0, 12.0, 241)


def test_b_identity_over_grid():
    cal = probit_calibrate(ETA_GRID)
    lhs = special.log_ndtr((ETA_GRID + cal.b) / np.sqrt(cal.r))
    assert np.allclose(lhs, special.log_ndtr(ETA_GRID), rtol=1e-10, atol=0)


def test_fisher_matching():
    cal = probit_calibrate(ETA_GRID)
    phi = np.exp(-0.5 * ETA_GRID**2) / math.sqrt(2 * math.pi)
    info = phi**2 / (special.ndtr(ETA_GRID) * special.ndtr(-ETA_GRID))
    assert np.allclose(1.0 / cal.r, info, rtol=1e-12)


def test_fixed_point_at_zero():
    cal = probit_calibrate(0.0)
    assert cal.r[0] == pytest.approx(math.pi / 2, abs=1e-12)
    assert cal.b[0] == 0.0


def test_r_grows_with_abs_eta():
    eta = np.linspace(0.0, 8.0, 81)
    r = probit_calibrate(eta).r
    assert np.all(r >= 1.0)
    assert np.all(np.diff(r) > 0)
    assert np.allclose(r, probit_calibrate(-eta).r, rtol=1e-12)


def test_deep_tail_stays_finite():
    cal = probit_calibrate([-37.0, 37.0])
    assert np.all(np.isfinite(cal.r)) and np.all(np.isfinite(cal.b))


def test_intercept_calibration_b():
    cal = intercept_calibration(10_000)
    r = 10_000 / math.log(10_000)
    assert cal.r[0] == pytest.approx(r)
    assert cal.b[0] == pytest.approx(-3.7 * (math.sqrt(r) - 1.0), rel=1e-14)
    assert intercept_calibration(10, r=5000.0).r[0] == 5000.0
    with pytest.raises(ParameterError):
        intercept_calibration(1)


def test_identity_calibration_gives_exact_likelihood():
    data = BinaryData.intercept_only([1, 0, 0, 0])
    th = np.array([-0.4])
    exact = special.log_ndtr(-0.4) + 3 * special.log_ndtr(0.4)
    assert probit_cda_loglik(th, data) == pytest.approx(exact, rel=1e-14)
    assert probit_cda_loglik(th, data, CalibrationParams.identity()) == pytest.approx(exact, rel=1e-14)


def test_proposal_covariance_is_scaled_least_squares():
    gen = np.random.default_rng(0)
    X = np.column_stack([np.ones(50), gen.normal(size=(50, 2))])
    y = (gen.random(50) < 0.3).astype(float)
    data = BinaryData(X, y)
    r0 = 7.5
    prop = probit_cda_propose(ChainState(np.zeros(3)), data, CalibrationParams([r0], [0.0]), gen)
    assert np.allclose(prop.cond_var, r0 * np.diag(np.linalg.inv(X.T @ X)), rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(-8, 8), r=st.floats(0.1, 1e4), b=st.floats(-300, 300))
def test_latents_on_correct_side(theta, r, b):
    data = BinaryData.intercept_only([1, 1, 0, 0, 0])
    prop = probit_cda_propose(ChainState(np.array([theta])), data, CalibrationParams([r], [b]), RngStream(0))
    z = prop.latents
    assert np.all(z[:2] >= 0) and np.all(z[2:] <= 0)
    assert np.isfinite(prop.theta[0])


def test_da_update_draws_from_conditional():
    data = BinaryData.intercept_only([1, 0, 0])
    state = probit_da_update(ChainState(np.array([0.0])), data, RngStream(1))
    assert state.cond_var == pytest.approx([1 / 3])


def test_adaptation_snapshot_transform_matches_eta():
    gen = np.random.default_rng(2)
    X = np.column_stack([np.ones(300), gen.normal(size=300)])
    y = (gen.random(300) < special.ndtr(-2 + X[:, 1])).astype(float)
    tr = run_chain(ProbitModel(BinaryData(X, y)), SamplerConfig(n_iter=150, n_burn=50, n_adapt=50), RngStream(3))
    snap = tr.snapshot
    # the transform (eta + b)/sqrt(r) tracks eta closely near the freeze point
    rmse = math.sqrt(np.mean((snap["transformed"] - snap["eta"]) ** 2))
    assert rmse < 0.5 * snap["eta"].std()
