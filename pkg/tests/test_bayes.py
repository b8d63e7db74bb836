"""Likelihood, prior, and posterior-assembly tests."""

import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from stepselect import (Dataset, GammaPrior, LogisticParams, ParamVector,
                        Prior, SolverConfig, likelihood_ratio, log_likelihood,
                        log_posterior_unnorm, log_prior,
                        make_log_posterior, make_logistic_exact_forward,
                        make_logistic_system, make_solver_forward,
                        max_observable_deviation)
from stepselect.bayes import LOG_2PI
from stepselect.errors import GridMismatch, NonFiniteState, NonMonotoneTimes
from stepselect.models import logistic_exact


def small_dataset(n=26, sigma=1.0):
    times = np.linspace(0.0, 10.0, n)
    return Dataset(times=times, values=np.linspace(100.0, 900.0, n),
                   sigma_fixed=sigma)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

def test_dataset_validation():
    with pytest.raises(NonMonotoneTimes):
        Dataset(times=[0.0, 1.0, 1.0], values=[1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        Dataset(times=[0.0, 1.0], values=[1.0, float("nan")])
    with pytest.raises(ValueError):
        Dataset(times=[0.0, 1.0], values=[1.0, 2.0], sigma_fixed=0.0)
    with pytest.raises(ValueError):
        Dataset(times=[0.0, 1.0], values=[1.0])
    assert small_dataset().n == 26


def test_param_vector_roundtrip():
    phi = ParamVector(theta=np.array([1.5]), sigma=2.0)
    assert phi.dim == 1
    assert np.array_equal(phi.free_vector(), [1.5])
    phi2 = phi.with_free_vector([2.5])
    assert phi2.theta[0] == 2.5 and phi2.sigma == 2.0

    free = ParamVector(theta=np.array([1.5]), sigma=2.0, sigma_fixed=False)
    assert free.dim == 2
    assert np.array_equal(free.free_vector(), [1.5, 2.0])
    free2 = free.with_free_vector([0.5, 3.0])
    assert free2.theta[0] == 0.5 and free2.sigma == 3.0
    with pytest.raises(ValueError):
        free.with_free_vector([1.0])
    with pytest.raises(ValueError):
        ParamVector(theta=np.array([1.0]), sigma=-1.0)


# ---------------------------------------------------------------------------
# gamma prior
# ---------------------------------------------------------------------------

def test_gamma_logpdf_unit_exponential():
    # Gamma(1, 1) at x = 1: log(e^{-1}) = -1 exactly
    assert GammaPrior(1.0, 1.0).logpdf(1.0) == -1.0


def test_gamma_moments_and_support():
    g = GammaPrior(2.0, 2.0)
    assert g.mean == 1.0
    assert g.sd == pytest.approx(math.sqrt(2.0) / 2.0)
    assert g.logpdf(0.0) == -math.inf
    assert g.logpdf(-1.0) == -math.inf
    with pytest.raises(ValueError):
        GammaPrior(0.0, 1.0)


def test_gamma_mode_of_glucose_prior():
    # Gamma(5, 0.4) peaks at (shape-1)/rate = 10, the true insulin gain
    g = GammaPrior(5.0, 0.4)
    assert g.logpdf(10.0) > g.logpdf(9.0)
    assert g.logpdf(10.0) > g.logpdf(11.0)


@settings(max_examples=80)
@given(st.floats(min_value=0.2, max_value=20.0, allow_nan=False),
       st.floats(min_value=0.05, max_value=20.0, allow_nan=False),
       st.floats(min_value=1e-3, max_value=50.0, allow_nan=False))
def test_gamma_logpdf_matches_scipy(shape, rate, x):
    ours = GammaPrior(shape, rate).logpdf(x)
    ref = scipy.stats.gamma.logpdf(x, a=shape, scale=1.0 / rate)
    assert ours == pytest.approx(ref, rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------

def test_zero_residual_likelihood():
    # perfect fit at sigma=1: -n/2 log(2 pi), n = 26
    ds = small_dataset()
    phi = ParamVector(theta=np.array([1.0]), sigma=1.0)
    ll = log_likelihood(ds, phi, lambda theta: ds.values)
    assert ll == pytest.approx(-13.0 * LOG_2PI, rel=0, abs=1e-12)


@settings(max_examples=50)
@given(st.floats(min_value=0.1, max_value=100.0, allow_nan=False),
       st.floats(min_value=0.1, max_value=100.0, allow_nan=False))
def test_likelihood_sigma_scaling_identity(s1, s2):
    ds = small_dataset()
    pred = ds.values + 3.0
    ss = float(np.sum((ds.values - pred) ** 2))
    f = lambda theta: pred
    ll1 = log_likelihood(ds, ParamVector(theta=np.array([1.0]), sigma=s1), f)
    ll2 = log_likelihood(ds, ParamVector(theta=np.array([1.0]), sigma=s2), f)
    expected = (ds.n * math.log(s2 / s1)
                + 0.5 * ss * (1.0 / s2 ** 2 - 1.0 / s1 ** 2))
    assert ll1 - ll2 == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_likelihood_absorbs_blowup():
    def exploding(theta):
        raise NonFiniteState(1.0, 3, theta)
    phi = ParamVector(theta=np.array([1.0]), sigma=1.0)
    assert log_likelihood(small_dataset(), phi, exploding) == -math.inf


def test_posterior_skips_forward_off_support():
    calls = []

    def forward(theta):
        calls.append(1)
        return small_dataset().values

    prior = Prior((GammaPrior(2.0, 2.0),))
    phi = ParamVector(theta=np.array([-1.0]), sigma=1.0)
    assert log_posterior_unnorm(small_dataset(), prior, phi, forward) == -math.inf
    assert not calls


def test_log_prior_requires_matching_components():
    prior = Prior((GammaPrior(2.0, 2.0),))
    phi = ParamVector(theta=np.array([1.0, 2.0]), sigma=1.0)
    with pytest.raises(ValueError):
        log_prior(prior, phi)


def test_log_prior_with_sampled_sigma():
    prior = Prior((GammaPrior(2.0, 2.0),), sigma=GammaPrior(3.0, 1.0))
    phi = ParamVector(theta=np.array([1.0]), sigma=2.0, sigma_fixed=False)
    expected = GammaPrior(2.0, 2.0).logpdf(1.0) + GammaPrior(3.0, 1.0).logpdf(2.0)
    assert log_prior(prior, phi) == pytest.approx(expected)
    with pytest.raises(ValueError):
        log_prior(Prior((GammaPrior(2.0, 2.0),)), phi)


# ---------------------------------------------------------------------------
# forward maps
# ---------------------------------------------------------------------------

def test_solver_forward_rejects_misaligned_grid_at_build():
    system = make_logistic_system(LogisticParams())
    times = np.linspace(0.0, 10.0, 26)
    with pytest.raises(GridMismatch):
        make_solver_forward(system, SolverConfig("rk4", 0.3), times)


def test_exact_forward_matches_closed_form():
    params = LogisticParams(lam=1.0, K=1000.0, X0=100.0)
    times = np.linspace(0.0, 10.0, 26)
    fwd = make_logistic_exact_forward(params, times)
    out = fwd(np.array([1.37]))
    ref = logistic_exact(times, LogisticParams(lam=1.37, K=1000.0, X0=100.0))
    assert np.array_equal(out, ref)


def test_solver_forward_converges_to_exact():
    params = LogisticParams(lam=1.0, K=1000.0, X0=100.0)
    system = make_logistic_system(params)
    times = np.linspace(0.0, 10.0, 26)
    exact = make_logistic_exact_forward(params, times)
    dev = [max_observable_deviation(
        make_solver_forward(system, SolverConfig("rk4", h), times),
        exact, np.array([1.0])) for h in (0.1, 0.05)]
    assert dev[1] < dev[0]
    assert 8.0 < dev[0] / dev[1] < 32.0   # fourth order


def test_likelihood_ratio_shrinks_at_solver_order():
    params = LogisticParams(lam=1.0, K=1000.0, X0=100.0)
    system = make_logistic_system(params)
    times = np.linspace(0.0, 10.0, 26)
    values = logistic_exact(times, params)
    ds = Dataset(times=times, values=values + 0.5, sigma_fixed=1.0)
    exact = make_logistic_exact_forward(params, times)
    phi = ParamVector(theta=np.array([1.0]), sigma=1.0)
    r = [likelihood_ratio(ds, phi,
                          make_solver_forward(system, SolverConfig("rk4", h),
                                              times), exact)
         for h in (0.2, 0.1)]
    # |R_h - 1| = O(h^4): halving h shrinks the gap ~16x
    assert abs(r[0] - 1.0) > abs(r[1] - 1.0) > 0.0
    assert 8.0 < abs(r[0] - 1.0) / abs(r[1] - 1.0) < 32.0


def test_make_log_posterior_is_deterministic():
    params = LogisticParams()
    system = make_logistic_system(params)
    times = np.linspace(0.0, 10.0, 26)
    ds = Dataset(times=times, values=logistic_exact(times, params),
                 sigma_fixed=1.0)
    prior = Prior((GammaPrior(2.0, 2.0),))
    phi = ParamVector(theta=np.array([1.0]), sigma=1.0)
    lp = make_log_posterior(ds, prior,
                            make_solver_forward(system, SolverConfig("rk4", 0.1),
                                                times), phi)
    assert lp(np.array([1.1])) == lp(np.array([1.1]))
    assert lp(np.array([-0.5])) == -math.inf
