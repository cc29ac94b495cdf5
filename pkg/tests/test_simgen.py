import math

import numpy as np
import pytest
from scipy import stats

from hsforest.distributions import RngStream
from hsforest.errors import CalibrationError, SpecError
from hsforest.simgen import (ScenarioSpec, _calibration_sample, calibrate_censoring,
                             censoring_rate, copula_block_cov, copula_covariates, draw_errors,
                             error_params, friedman, generate, propensity, spike_slab,
                             treatment_effect, with_seed)


def test_propensity_example():
    X = np.full((1, 5), 0.5)
    assert propensity(X, ScenarioSpec("linear", 1, 5))[0] == pytest.approx(0.4207, abs=1e-4)


def test_friedman_example():
    assert friedman(np.full((1, 5), 0.5))[0] == pytest.approx(14.5711, abs=1e-4)


def test_null_family():
    g = generate(ScenarioSpec("null", 50, 6, seed=1))
    assert np.all(g.truth_cate == 0) and g.truth_ate == 0


@pytest.mark.parametrize("family", ["linear", "friedman", "homogeneous", "null",
                                    "dense-homogeneous", "dense-heterogeneous"])
def test_truth_ate_is_mean_and_shapes(family):
    g = generate(ScenarioSpec(family, 120, 8, seed=2))
    assert g.truth_ate == float(np.mean(g.truth_cate))
    d = g.data
    assert d.X.shape == (120, 8) and np.all(d.y > 0)
    assert np.all((d.X >= 0) & (d.X <= 1))
    assert set(np.unique(d.A)) <= {0.0, 1.0} and set(np.unique(d.delta)) <= {0.0, 1.0}


def test_homogeneous_effect_is_five():
    assert np.all(treatment_effect(np.zeros((3, 6)), ScenarioSpec("homogeneous", 3, 6), None) == 5)


def test_spec_validation():
    with pytest.raises(SpecError):
        ScenarioSpec("friedman", 10, 4).validate()
    with pytest.raises(SpecError):
        ScenarioSpec("unknown", 10, 6).validate()
    with pytest.raises(SpecError):
        ScenarioSpec("linear", 10, 6, error_kind="cauchy").validate()
    with pytest.raises(SpecError):
        ScenarioSpec("linear", 10, 6, copula_rho=1.0).validate()
    with pytest.raises(SpecError):
        ScenarioSpec("linear", 10, 6, censor_target=0.99).validate()
    ScenarioSpec("homogeneous", 10, 2).validate()


def test_determinism_byte_for_byte():
    spec = ScenarioSpec("linear", 80, 12, seed=5, copula_rho=0.5)
    a, b = generate(spec), generate(spec)
    for f in ("X", "A", "y", "delta"):
        assert getattr(a.data, f).tobytes() == getattr(b.data, f).tobytes()
    assert a.beta_f.tobytes() == b.beta_f.tobytes()
    assert a.beta_tau.tobytes() == b.beta_tau.tobytes()
    assert a.truth_cate.tobytes() == b.truth_cate.tobytes() and a.eta == b.eta
    c = generate(with_seed(spec, 6))
    assert c.data.y.tobytes() != a.data.y.tobytes()


def test_spike_slab_sparsity():
    beta = spike_slab(20_000, 0.1, np.random.default_rng(0))
    assert abs(np.mean(beta != 0) - 0.1) < 0.01


# ---------------------------------------------------------------- copula

def test_copula_cov_entry():
    assert copula_block_cov(3, 0.9)[0, 1] == pytest.approx(0.94868, abs=1e-5)


def test_copula_marginals_and_blocks():
    U = copula_covariates(10_000, 60, 0.9, RngStream(3))
    for j in range(60):
        assert stats.kstest(U[:, j], "uniform").pvalue > 1e-3
    assert abs(np.corrcoef(U[:, 0], U[:, 50])[0, 1]) < 0.03
    # within a block the columns are strongly dependent
    assert np.corrcoef(U[:, 0], U[:, 1])[0, 1] > 0.8


def test_copula_rejects_bad_rho():
    with pytest.raises(ValueError):
        copula_covariates(5, 3, 0.0, RngStream(0))


# ---------------------------------------------------------------- errors

@pytest.mark.parametrize("kind", ["normal", "gumbel", "logistic"])
def test_error_families_variance_matched(kind):
    e = draw_errors(kind, 3.0, 1_000_000, np.random.default_rng(4))
    assert abs(e.var() / 3.0 - 1) < 0.05
    assert abs(e.mean()) < 0.01


def test_error_params_closed_form():
    loc, beta = error_params("gumbel", 3.0)
    assert beta == pytest.approx(3 * math.sqrt(2) / math.pi)
    assert loc + beta * np.euler_gamma == pytest.approx(0, abs=1e-15)
    assert error_params("logistic", 3.0)[1] == pytest.approx(3 / math.pi)


# ---------------------------------------------------------------- censoring

def test_censoring_rate_monotone_and_vanishing():
    spec = ScenarioSpec("linear", 200, 10, seed=7)
    log_t, unit = _calibration_sample(spec, 20_000, RngStream(1))
    rates = [censoring_rate(eta, log_t, unit) for eta in np.logspace(-6, 6, 49)]
    assert np.all(np.diff(rates) >= 0)
    assert rates[0] < 0.01


def test_calibration_hits_target_on_fresh_sample():
    spec = ScenarioSpec("linear", 200, 100, seed=8)
    eta = calibrate_censoring(spec)
    log_t, unit = _calibration_sample(spec, 100_000, RngStream(999))
    assert 0.34 <= censoring_rate(eta, log_t, unit) <= 0.36


def test_calibration_rejects_zero_target():
    with pytest.raises(CalibrationError):
        calibrate_censoring(ScenarioSpec("linear", 20, 6, censor_target=0.0))


def test_zero_target_generates_no_censoring():
    g = generate(ScenarioSpec("homogeneous", 40, 3, censor_target=0.0))
    assert np.all(g.data.delta == 1) and g.censoring == 0
