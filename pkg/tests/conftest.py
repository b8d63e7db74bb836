"""Shared fixtures.

The expensive fixtures (full logistic sweeps at the acceptance chain length,
the glucose sweep) are session-scoped and only materialize when an acceptance
test asks for them; unit tests run in seconds without touching them.
"""

import pytest

from stepselect.harness import (ExperimentSpec, McmcSettings, TimesSpec,
                                generate_synthetic, report, run_sweep)

ACCEPT_SEED = 20260816
ACCEPT_GRID = (0.2, 0.1, 0.05, 0.025)
ACCEPT_N_ITER = 96000


def logistic_spec(sigma: float, solver: str = "rk4",
                  n_iter: int = ACCEPT_N_ITER) -> ExperimentSpec:
    return ExperimentSpec(model="logistic", solver=solver, h_grid=ACCEPT_GRID,
                          seed=ACCEPT_SEED, sigma=sigma,
                          mcmc=McmcSettings(n_iter=n_iter))


@pytest.fixture(scope="session")
def logistic_dataset_s1():
    return generate_synthetic(logistic_spec(1.0))


@pytest.fixture(scope="session")
def logistic_dataset_s30():
    return generate_synthetic(logistic_spec(30.0))


def _sweep(spec: ExperimentSpec, out_dir, jobs: int = 1):
    record = run_sweep(spec, out_dir, jobs=jobs)
    report(out_dir)
    return record, out_dir


@pytest.fixture(scope="session")
def sweep_s1(tmp_path_factory):
    """Full logistic sigma=1 RK4 sweep at the acceptance chain length."""
    return _sweep(logistic_spec(1.0), tmp_path_factory.mktemp("sweep_s1"))


@pytest.fixture(scope="session")
def sweep_s30(tmp_path_factory):
    """Same grid and seed at sigma=30."""
    return _sweep(logistic_spec(30.0), tmp_path_factory.mktemp("sweep_s30"))


@pytest.fixture(scope="session")
def sweep_euler_s1(tmp_path_factory):
    """Euler on the same sigma=1 grid; the sweep that must fail to flatten."""
    return _sweep(logistic_spec(1.0, solver="euler"),
                  tmp_path_factory.mktemp("sweep_euler_s1"))


@pytest.fixture(scope="session")
def sweep_glucose(tmp_path_factory):
    spec = ExperimentSpec(
        model="glucose", solver="rk4",
        h_grid=tuple(0.25 * 2.0 ** (-k) for k in range(8)),
        seed=ACCEPT_SEED, sigma=5.0,
        times=TimesSpec(start=0.0, stop=2.0, n=5),
        prior={"shape": 5.0, "rate": 0.4},
        mcmc=McmcSettings(n_iter=12000, step_scale=0.5),
    )
    return _sweep(spec, tmp_path_factory.mktemp("sweep_glucose"), jobs=4)
