"""Fixed-step explicit one-step ODE solvers on uniform grids.

All solvers advance ``x_{n+1} = x_n + h * K(t_n, x_n, h)`` where ``K`` is a
combination of right-hand-side stage evaluations.  Step sizes must divide the
target time grid exactly (up to a relative tolerance): observation times are
hit by landing on grid nodes, never by interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit, GridMismatch, NonFiniteState

METHOD_ORDERS = {"euler": 1, "rk2": 2, "rk4": 4}

# relative tolerance used for every "is this time a grid node" decision
GRID_RTOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Solver method plus step size.

    The convergence order is a fixed property of the method: euler is first
    order, the explicit midpoint rule (rk2) second, classical rk4 fourth.
    """

    method: str
    h: float

    def __post_init__(self):
        if self.method not in METHOD_ORDERS:
            raise ValueError(f"unknown method {self.method!r}; "
                             f"expected one of {sorted(METHOD_ORDERS)}")
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ValueError(f"step size must be finite and positive, got {self.h}")

    @property
    def order_p(self) -> int:
        return METHOD_ORDERS[self.method]


@dataclass
class Trajectory:
    """Solution values on a uniform time grid."""

    grid: np.ndarray    # (n_nodes,)
    states: np.ndarray  # (n_nodes, dim_p)

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def values_at(self, times) -> np.ndarray:
        """States at the requested times, which must be grid nodes.

        Raises GridMismatch if any time is not a node of the trajectory grid
        (relative tolerance GRID_RTOL, measured in units of h).
        """
        times = np.atleast_1d(np.asarray(times, dtype=float))
        t0 = float(self.grid[0])
        if len(self.grid) == 1:
            if np.any(np.abs(times - t0) > GRID_RTOL * max(1.0, abs(t0))):
                raise GridMismatch("single-node trajectory only covers its start time")
            return np.repeat(self.states, len(times), axis=0)
        h = self.h
        pos = (times - t0) / h
        idx = np.rint(pos).astype(int)
        off = np.abs(pos - idx)
        bad = (off > GRID_RTOL * np.maximum(1.0, np.abs(pos))) \
            | (idx < 0) | (idx >= len(self.grid))
        if np.any(bad):
            t_bad = times[bad][0]
            raise GridMismatch(f"time {t_bad:.12g} is not a node of the "
                               f"solver grid (h={h:.12g})")
        return self.states[idx]


def step_euler(x, t, h, rhs, theta):
    """One explicit Euler step: K = K1."""
    k1 = rhs(x, t, theta)
    return x + h * k1


def step_rk2(x, t, h, rhs, theta):
    """One explicit midpoint step: K = K2 evaluated at the half step."""
    half = 0.5 * h
    k1 = rhs(x, t, theta)
    k2 = rhs(x + half * k1, t + half, theta)
    return x + h * k2


def step_rk4(x, t, h, rhs, theta):
    """One classical fourth-order Runge-Kutta step."""
    half = 0.5 * h
    k1 = rhs(x, t, theta)
    k2 = rhs(x + half * k1, t + half, theta)
    k3 = rhs(x + half * k2, t + half, theta)
    k4 = rhs(x + h * k3, t + h, theta)
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


_STEPPERS = {"euler": step_euler, "rk2": step_rk2, "rk4": step_rk4}


def divides(h: float, span: float, rtol: float = GRID_RTOL) -> bool:
    """True if span is an integer (>= 1) multiple of h up to rtol."""
    if span <= 0.0:
        return False
    n = round(span / h)
    return n >= 1 and abs(span - n * h) <= rtol * max(span, h)


def check_grid(h: float, times) -> None:
    """Raise GridMismatch unless h divides every gap of ``times``.

    ``times`` must be strictly increasing; a step passes when every
    consecutive gap is an integer multiple of h within GRID_RTOL.
    """
    times = np.asarray(times, dtype=float)
    for i, gap in enumerate(np.diff(times)):
        if not divides(h, float(gap)):
            raise GridMismatch(
                f"h={h:.12g} does not divide the gap {gap:.12g} between "
                f"t={times[i]:.12g} and t={times[i + 1]:.12g}")


def _n_steps(t0: float, t_end: float, h: float) -> int:
    span = t_end - t0
    if span == 0.0:
        return 0
    if not divides(h, span):
        raise GridMismatch(f"h={h:.12g} does not divide [{t0:.12g}, {t_end:.12g}]")
    return round(span / h)


def integrate_states(system, theta, config: SolverConfig, t0: float,
                     n_steps: int) -> np.ndarray:
    """Raw state array over ``n_steps`` solver steps from t0, one row per node.

    The allocation-light core of :func:`integrate`: no grid array, no
    Trajectory wrapper.  Samplers hit this once per posterior evaluation, so
    they precompute ``n_steps`` and their observation node indices and call
    it directly.
    """
    h = config.h
    theta = np.asarray(theta, dtype=float)

    rhs_scalar = getattr(system, "rhs_scalar", None)
    rhs_tuple = getattr(system, "rhs_tuple", None)
    if system.dim_p == 1 and rhs_scalar is not None:
        theta_f = tuple(float(v) for v in np.atleast_1d(theta))
        return _integrate_scalar(rhs_scalar, float(system.x0[0]), theta_f,
                                 config.method, t0, h, n_steps)
    if rhs_tuple is not None:
        theta_f = tuple(float(v) for v in np.atleast_1d(theta))
        return _integrate_tuple(rhs_tuple,
                                tuple(float(v) for v in system.x0), theta_f,
                                config.method, t0, h, n_steps)
    return _integrate_array(system.rhs, np.asarray(system.x0, dtype=float),
                            theta, config.method, t0, h, n_steps)


def integrate(system, theta, config: SolverConfig, t0: float, t_end: float) -> Trajectory:
    """Integrate ``system`` from t0 to t_end on the uniform grid of ``config``.

    Parameters
    ----------
    system : object with ``rhs(x, t, theta)``, ``dim_p`` and ``x0`` attributes;
        an optional ``rhs_scalar(x, t, theta)`` enables a fast path for
        one-dimensional states (same arithmetic, same results), and an
        optional ``rhs_tuple(x, t, theta)`` does the same for small
        multi-state systems.
    theta : parameter vector handed through to the right-hand side.

    Raises
    ------
    GridMismatch if h does not divide the interval, NonFiniteState as soon
    as a step produces a NaN or infinity (reported with its time, step index
    and theta).
    """
    h = config.h
    n_steps = _n_steps(t0, t_end, h)
    states = integrate_states(system, theta, config, t0, n_steps)
    grid = t0 + h * np.arange(n_steps + 1)
    return Trajectory(grid=grid, states=states)


def _integrate_array(rhs, x0, theta, method, t0, h, n_steps):
    step = _STEPPERS[method]
    dim = x0.shape[0]
    states = np.empty((n_steps + 1, dim))
    x = x0.copy()
    states[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            x = step(x, t0 + n * h, h, rhs, theta)
            if not np.isfinite(x).all():
                raise NonFiniteState(t0 + (n + 1) * h, n, theta)
            states[n + 1] = x
    return states


def _integrate_scalar(rhs_s, x0, theta, method, t0, h, n_steps):
    # Mirrors the step functions stage for stage so results are bit-identical
    # with the array path; plain floats cut the per-step overhead hard, which
    # matters because the samplers call this millions of times.
    out = np.empty((n_steps + 1, 1))
    x = x0
    out[0, 0] = x
    half = 0.5 * h
    sixth = h / 6.0
    isfinite = math.isfinite
    if method == "euler":
        for n in range(n_steps):
            t = t0 + n * h
            x = x + h * rhs_s(x, t, theta)
            if not isfinite(x):
                raise NonFiniteState(t0 + (n + 1) * h, n, theta)
            out[n + 1, 0] = x
    elif method == "rk2":
        for n in range(n_steps):
            t = t0 + n * h
            k1 = rhs_s(x, t, theta)
            k2 = rhs_s(x + half * k1, t + half, theta)
            x = x + h * k2
            if not isfinite(x):
                raise NonFiniteState(t0 + (n + 1) * h, n, theta)
            out[n + 1, 0] = x
    else:
        for n in range(n_steps):
            t = t0 + n * h
            k1 = rhs_s(x, t, theta)
            k2 = rhs_s(x + half * k1, t + half, theta)
            k3 = rhs_s(x + half * k2, t + half, theta)
            k4 = rhs_s(x + h * k3, t + h, theta)
            x = x + sixth * (k1 + 2.0 * (k2 + k3) + k4)
            if not isfinite(x):
                raise NonFiniteState(t0 + (n + 1) * h, n, theta)
            out[n + 1, 0] = x
    return out


def _integrate_tuple(rhs_t, x0, theta, method, t0, h, n_steps):
    # Same stage-for-stage mirroring as the scalar path, on float tuples.
    dim = len(x0)
    out = np.empty((n_steps + 1, dim))
    x = x0
    out[0] = x
    half = 0.5 * h
    sixth = h / 6.0
    isfinite = math.isfinite
    if method == "euler":
        for n in range(n_steps):
            t = t0 + n * h
            k1 = rhs_t(x, t, theta)
            x = tuple(xi + h * ki for xi, ki in zip(x, k1))
            if not all(map(isfinite, x)):
                raise NonFiniteState(t0 + (n + 1) * h, n, theta)
            out[n + 1] = x
    elif method == "rk2":
        for n in range(n_steps):
            t = t0 + n * h
            k1 = rhs_t(x, t, theta)
            k2 = rhs_t(tuple(xi + half * ki for xi, ki in zip(x, k1)),
                       t + half, theta)
            x = tuple(xi + h * ki for xi, ki in zip(x, k2))
            if not all(map(isfinite, x)):
                raise NonFiniteState(t0 + (n + 1) * h, n, theta)
            out[n + 1] = x
    else:
        for n in range(n_steps):
            t = t0 + n * h
            k1 = rhs_t(x, t, theta)
            k2 = rhs_t(tuple(xi + half * ki for xi, ki in zip(x, k1)),
                       t + half, theta)
            k3 = rhs_t(tuple(xi + half * ki for xi, ki in zip(x, k2)),
                       t + half, theta)
            k4 = rhs_t(tuple(xi + h * ki for xi, ki in zip(x, k3)),
                       t + h, theta)
            x = tuple(xi + sixth * (a + 2.0 * (b + c) + dd)
                      for xi, a, b, c, dd in zip(x, k1, k2, k3, k4))
            if not all(map(isfinite, x)):
                raise NonFiniteState(t0 + (n + 1) * h, n, theta)
            out[n + 1] = x
    return out


def estimate_order(system, theta, method: str, h_list, t0: float,
                   t_check: float, oracle) -> float:
    """Empirical convergence order from errors against an exact solution.

    Integrates to ``t_check`` for every h in ``h_list`` (at least three
    values) and returns the least-squares slope of log error versus log h,
    with the error measured as the Euclidean norm of the state deviation
    from ``oracle(t_check)``.

    Raises DegenerateFit when every error sits at floating-point noise
    (below 1e-13): a slope fitted through noise means nothing.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ValueError("need at least three step sizes to fit an order")
    ref = np.asarray(oracle(t_check), dtype=float).ravel()
    errs = []
    for h in h_list:
        traj = integrate(system, theta, SolverConfig(method, h), t0, t_check)
        errs.append(float(np.linalg.norm(traj.states[-1] - ref)))
    errs = np.asarray(errs)
    if np.all(errs < 1e-13):
        raise DegenerateFit(
            f"errors {errs} all below 1e-13; order fit would be noise")
    keep = errs > 1e-15
    if keep.sum() < 2:
        raise DegenerateFit("fewer than two errors above floating-point noise")
    slope, _ = np.polyfit(np.log(np.asarray(h_list)[keep]), np.log(errs[keep]), 1)
    return float(slope)
