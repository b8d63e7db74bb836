"""Gaussian observation likelihood, Gamma priors, and posterior assembly.

Observations are modelled as y_i = f(X_theta(t_i)) + eps_i with iid Gaussian
noise of standard deviation sigma.  A *forward map* is any callable
``theta -> predicted observables at the dataset times``; factories below
build one from the closed-form solution (when a model has one) or from a
solver configuration, so the same likelihood code serves both the exact and
the discretised model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import NonFiniteState, NonMonotoneTimes
from .models import LogisticParams, logistic_exact
from .ode import SolverConfig, check_grid, integrate_states

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Dataset:
    """Observation times and values, with the noise scale when it is known."""

    times: np.ndarray
    values: np.ndarray
    sigma_fixed: Optional[float] = None

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.times.shape != self.values.shape or self.times.size < 1:
            raise ValueError("times and values must be equal-length, non-empty")
        if np.any(np.diff(self.times) <= 0.0):
            raise NonMonotoneTimes("observation times must be strictly increasing")
        if not np.all(np.isfinite(self.values)) or not np.all(np.isfinite(self.times)):
            raise ValueError("observations must be finite")
        if self.sigma_fixed is not None and not self.sigma_fixed > 0.0:
            raise ValueError("sigma_fixed must be positive")

    @property
    def n(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class ParamVector:
    """Inferred ODE parameters plus the noise scale.

    Both shipped models fix sigma, so the free vector is just theta; set
    ``sigma_fixed=False`` to append sigma as the last sampled coordinate.
    """

    theta: np.ndarray
    sigma: float
    sigma_fixed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "theta",
                           np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")

    @property
    def dim(self) -> int:
        return self.theta.size + (0 if self.sigma_fixed else 1)

    def free_vector(self) -> np.ndarray:
        if self.sigma_fixed:
            return self.theta.copy()
        return np.append(self.theta, self.sigma)

    def with_free_vector(self, vec) -> "ParamVector":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        if vec.size != self.dim:
            raise ValueError(f"expected a vector of length {self.dim}")
        if self.sigma_fixed:
            return replace(self, theta=vec)
        return replace(self, theta=vec[:-1], sigma=float(vec[-1]))


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape k, rate r) density on the open half-line."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0.0 and self.rate > 0.0):
            raise ValueError("shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def sd(self) -> float:
        return math.sqrt(self.shape) / self.rate

    def logpdf(self, x: float) -> float:
        if x <= 0.0:
            return -math.inf
        return (self.shape * math.log(self.rate) - math.lgamma(self.shape)
                + (self.shape - 1.0) * math.log(x) - self.rate * x)


@dataclass(frozen=True)
class Prior:
    """Independent Gamma components per theta coordinate (plus sigma's, if sampled)."""

    theta: Tuple[GammaPrior, ...]
    sigma: Optional[GammaPrior] = None


def log_prior(prior: Prior, phi: ParamVector) -> float:
    if len(prior.theta) != phi.theta.size:
        raise ValueError("prior has wrong number of theta components")
    total = 0.0
    for comp, value in zip(prior.theta, phi.theta):
        total += comp.logpdf(float(value))
        if total == -math.inf:
            return -math.inf
    if not phi.sigma_fixed:
        if prior.sigma is None:
            raise ValueError("sigma is sampled but the prior has no sigma component")
        total += prior.sigma.logpdf(phi.sigma)
    return total


def log_likelihood(dataset: Dataset, phi: ParamVector, forward: Callable) -> float:
    """Gaussian log-likelihood of the dataset under the forward map.

    A forward solve that blows up (NonFiniteState) means the parameter gives
    the data zero likelihood: returns -inf rather than propagating.
    """
    try:
        pred = forward(phi.theta)
    except NonFiniteState:
        return -math.inf
    resid = dataset.values - pred
    if not np.all(np.isfinite(resid)):
        return -math.inf
    n = dataset.n
    sigma = phi.sigma
    return (-n * math.log(sigma) - 0.5 * n * LOG_2PI
            - 0.5 * float(resid @ resid) / (sigma * sigma))


def log_posterior_unnorm(dataset: Dataset, prior: Prior, phi: ParamVector,
                         forward: Callable) -> float:
    """log prior + log likelihood; skips the forward solve off prior support."""
    lp = log_prior(prior, phi)
    if lp == -math.inf:
        return -math.inf
    return lp + log_likelihood(dataset, phi, forward)


def make_log_posterior(dataset: Dataset, prior: Prior, forward: Callable,
                       base_phi: ParamVector) -> Callable:
    """Bind everything into a callable on free parameter vectors.

    The returned function is pure and deterministic, which is what lets
    stored chain energies be recomputed bit for bit.
    """
    def logpost(vec) -> float:
        return log_posterior_unnorm(dataset, prior,
                                    base_phi.with_free_vector(vec), forward)
    return logpost


# ---------------------------------------------------------------------------
# forward-map factories
# ---------------------------------------------------------------------------

def make_solver_forward(system, config: SolverConfig, times) -> Callable:
    """Forward map through a fixed-step solve anchored at the first time.

    Grid admissibility (h divides every observation gap) is checked here,
    once, at build time, and the observation node indices are frozen with
    it; each call then pays for one solve plus an index lookup.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    check_grid(config.h, times)
    t0 = float(times[0])
    idx = np.rint((times - t0) / config.h).astype(int)
    n_steps = int(idx[-1])
    obs = system.obs

    def forward(theta):
        states = integrate_states(system, theta, config, t0, n_steps)
        return obs(states[idx])
    return forward


def make_logistic_exact_forward(params: LogisticParams, times) -> Callable:
    """Forward map through the closed-form logistic solution."""
    times = np.atleast_1d(np.asarray(times, dtype=float))

    def forward(theta):
        return logistic_exact(times, replace(params, lam=float(theta[0])))
    return forward


# ---------------------------------------------------------------------------
# discretisation diagnostics
# ---------------------------------------------------------------------------

def likelihood_ratio(dataset: Dataset, phi: ParamVector, forward_h: Callable,
                     forward_exact: Callable) -> float:
    """R_h = L_h / L_exact at one parameter point.

    |R_h - 1| shrinks like h^p when the solver converges with order p, so
    log-log slopes of this ratio against h are an end-to-end order check on
    the whole likelihood pipeline.
    """
    return math.exp(log_likelihood(dataset, phi, forward_h)
                    - log_likelihood(dataset, phi, forward_exact))


def max_observable_deviation(forward_h: Callable, forward_exact: Callable,
                             theta) -> float:
    """Largest |f(X_h(t_i)) - f(X(t_i))| over the observation times."""
    return float(np.max(np.abs(forward_h(theta) - forward_exact(theta))))
