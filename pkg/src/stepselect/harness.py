"""Experiment harness: specs, synthetic data, sweeps over h, and reports.

An :class:`ExperimentSpec` is a plain JSON-compatible tree that pins every
knob of a study: model, solver, step grid, seeds, priors, sampler and
estimator settings.  ``run_sweep`` executes one MCMC + evidence estimate per
step size (independent runs, optionally in parallel worker processes),
regresses the evidence curve, and leaves a self-contained run directory
behind; ``report`` turns that directory into flat CSV tables.

Reproducibility contract: the same spec produces byte-identical observation,
table and curve CSVs.  Timings are real and therefore live in their own
files, never in the deterministic tables.  Per-step chain seeds derive from
the spec seed and the step index, so a sweep is reproducible run-by-run no
matter how work is distributed over workers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .bayes import (Dataset, GammaPrior, ParamVector, Prior,
                    make_log_posterior, make_logistic_exact_forward,
                    make_solver_forward)
from .errors import ParseError, StepSelectError
from .evidence import (GridSpec, bracket_bounds, evidence_from_chain,
                       quadrature_marginal)
from .mcmc import ProposalConfig, load_chain_csv, mh_run, save_chain_csv
from .models import (GlucoseParams, LogisticParams, logistic_exact,
                     make_glucose_system, make_logistic_system)
from .ode import METHOD_ORDERS, SolverConfig, check_grid, integrate
from .stepfit import build_report, fit_curve

MODELS = ("logistic", "glucose")

LOGISTIC_DEFAULTS = {"lam": 1.0, "K": 1000.0, "X0": 100.0}
GLUCOSE_DEFAULTS = {"theta0": 10.0, "theta1": 26.6, "theta2": 0.2,
                    "a": 1.0, "b": 2.0, "Gb": 80.0, "d0": 90.0, "D0": 200.0}


@dataclass
class TimesSpec:
    start: float = 0.0
    stop: float = 10.0
    n: int = 26


@dataclass
class McmcSettings:
    n_iter: int = 12000
    burn_in: Optional[int] = None      # None -> 20% of n_iter
    step_scale: float = 0.02
    adapt: bool = True
    adapt_window: int = 50
    target_accept: float = 0.30
    init: Optional[float] = None       # None -> prior mean

    def resolved_burn_in(self) -> int:
        return self.n_iter // 5 if self.burn_in is None else self.burn_in


@dataclass
class EvidenceSettings:
    subsample: int = 500
    shrink: float = 0.5
    trunc_lo: float = 5.0
    trunc_hi: float = 95.0


@dataclass
class RegressionSettings:
    mask_smallest: int = 4
    mask_h: Optional[Tuple[float, ...]] = None


@dataclass
class ExperimentSpec:
    model: str = "logistic"
    solver: str = "rk4"
    h_grid: Tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    seed: int = 0
    sigma: float = 1.0
    params: dict = field(default_factory=dict)
    times: TimesSpec = field(default_factory=TimesSpec)
    observations_csv: Optional[str] = None
    prior: dict = field(default_factory=lambda: {"shape": 2.0, "rate": 2.0})
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    evidence: EvidenceSettings = field(default_factory=EvidenceSettings)
    regression: RegressionSettings = field(default_factory=RegressionSettings)
    jeffreys_threshold: float = 0.99

    def __post_init__(self):
        if self.model not in MODELS:
            raise ParseError(f"unknown model {self.model!r}")
        if len(self.h_grid) < 1 or len(set(self.h_grid)) != len(self.h_grid):
            raise ParseError("h_grid must be non-empty without duplicates")
        defaults = LOGISTIC_DEFAULTS if self.model == "logistic" else GLUCOSE_DEFAULTS
        merged = dict(defaults)
        merged.update(self.params)
        self.params = merged

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["h_grid"] = list(self.h_grid)
        if self.regression.mask_h is not None:
            d["regression"]["mask_h"] = list(self.regression.mask_h)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        try:
            if "times" in d and isinstance(d["times"], dict):
                d["times"] = TimesSpec(**d["times"])
            if "mcmc" in d and isinstance(d["mcmc"], dict):
                d["mcmc"] = McmcSettings(**d["mcmc"])
            if "evidence" in d and isinstance(d["evidence"], dict):
                d["evidence"] = EvidenceSettings(**d["evidence"])
            if "regression" in d and isinstance(d["regression"], dict):
                reg = dict(d["regression"])
                if reg.get("mask_h") is not None:
                    reg["mask_h"] = tuple(reg["mask_h"])
                d["regression"] = RegressionSettings(**reg)
            if "h_grid" in d:
                d["h_grid"] = tuple(d["h_grid"])
            return cls(**d)
        except TypeError as exc:
            raise ParseError(f"bad experiment spec: {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "ExperimentSpec":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    # -- derived helpers ----------------------------------------------------

    def chain_seed(self, k: int) -> int:
        """Deterministic per-step seed; index k is the position in h_grid."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(k + 1,))
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def data_seed(self) -> int:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(0,))
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def obs_times(self) -> np.ndarray:
        return np.linspace(self.times.start, self.times.stop, self.times.n)

    def build_prior(self) -> Prior:
        return Prior((GammaPrior(shape=float(self.prior["shape"]),
                                 rate=float(self.prior["rate"])),))

    def init_value(self) -> float:
        if self.mcmc.init is not None:
            return float(self.mcmc.init)
        comp = self.build_prior().theta[0]
        return comp.mean


def build_system(spec: ExperimentSpec, dataset: Dataset):
    p = spec.params
    if spec.model == "logistic":
        return make_logistic_system(LogisticParams(lam=p["lam"], K=p["K"],
                                                   X0=p["X0"]))
    gp = GlucoseParams(theta0=p["theta0"], theta1=p["theta1"], theta2=p["theta2"],
                       a=p["a"], b=p["b"], Gb=p["Gb"])
    return make_glucose_system(gp, d0=float(dataset.values[0]), D0=p["D0"])


def exact_forward(spec: ExperimentSpec, dataset: Dataset):
    """Closed-form forward map, or None when the model has none."""
    if spec.model != "logistic":
        return None
    p = spec.params
    return make_logistic_exact_forward(
        LogisticParams(lam=p["lam"], K=p["K"], X0=p["X0"]), dataset.times)


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------

def generate_synthetic(spec: ExperimentSpec) -> Dataset:
    """Draw y_i = f(X(t_i)) + noise from the spec's true parameters.

    The logistic truth comes from the closed-form solution, so no solver
    error contaminates the data.  The glucose model has no closed form; its
    truth is a reference RK4 solve 2^11 steps per observation gap deep,
    which parks the discretisation error at the 1e-15 level.
    """
    times = spec.obs_times()
    p = spec.params
    if spec.model == "logistic":
        truth = logistic_exact(times, LogisticParams(lam=p["lam"], K=p["K"],
                                                     X0=p["X0"]))
    else:
        gp = GlucoseParams(theta0=p["theta0"], theta1=p["theta1"],
                           theta2=p["theta2"], a=p["a"], b=p["b"], Gb=p["Gb"])
        system = make_glucose_system(gp, d0=p["d0"], D0=p["D0"])
        gap = float(times[1] - times[0]) if times.size > 1 else 1.0
        href = gap / 2048.0
        traj = integrate(system, np.array([p["theta0"]]),
                         SolverConfig("rk4", href), float(times[0]),
                         float(times[-1]))
        truth = system.obs(traj.values_at(times))
    rng = np.random.default_rng(spec.data_seed())
    values = truth + spec.sigma * rng.standard_normal(times.size)
    return Dataset(times=times, values=values, sigma_fixed=spec.sigma)


def save_observations(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,y\n")
        for t, y in zip(dataset.times, dataset.values):
            fh.write("%.17g,%.17g\n" % (t, y))


def load_observations(path, sigma: Optional[float] = None) -> Dataset:
    """Read a t,y CSV (header required, '.' decimal separator)."""
    times, values = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "t,y":
            raise ParseError(f"expected header 't,y' in {path}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"line {lineno} of {path}: expected 2 fields, "
                                 f"got {len(parts)}")
            try:
                times.append(float(parts[0]))
                values.append(float(parts[1]))
            except ValueError as exc:
                raise ParseError(f"line {lineno} of {path}: {exc}") from exc
    if not times:
        raise ParseError(f"{path} holds no observations")
    return Dataset(times=np.asarray(times), values=np.asarray(values),
                   sigma_fixed=sigma)


def load_or_generate(spec: ExperimentSpec) -> Dataset:
    if spec.observations_csv is not None:
        return load_observations(spec.observations_csv, sigma=spec.sigma)
    return generate_synthetic(spec)


# ---------------------------------------------------------------------------
# single-step run and sweep
# ---------------------------------------------------------------------------

def run_single(spec: ExperimentSpec, dataset: Dataset, k: int,
               out_dir: Optional[Path] = None) -> dict:
    """One MCMC chain plus evidence estimate at h = spec.h_grid[k].

    The reported cpu_seconds is the sampler wall clock only: posterior
    evaluations included, data generation and file writing excluded.
    """
    h = float(spec.h_grid[k])
    config = SolverConfig(spec.solver, h)
    check_grid(h, dataset.times)
    system = build_system(spec, dataset)
    forward = make_solver_forward(system, config, dataset.times)
    prior = spec.build_prior()
    base_phi = ParamVector(theta=np.array([spec.init_value()]),
                           sigma=spec.sigma)
    logpost = make_log_posterior(dataset, prior, forward, base_phi)

    seed = spec.chain_seed(k)
    proposal = ProposalConfig(step_scales=np.array([spec.mcmc.step_scale]),
                              adapt=spec.mcmc.adapt,
                              adapt_window=spec.mcmc.adapt_window,
                              target_accept=spec.mcmc.target_accept)
    chain = mh_run(logpost, base_phi, proposal, n_iter=spec.mcmc.n_iter,
                   burn_in=spec.mcmc.resolved_burn_in(), seed=seed)
    est = evidence_from_chain(chain, subsample=spec.evidence.subsample,
                              shrink=spec.evidence.shrink, seed=seed,
                              h=h, solver=spec.solver,
                              trunc_pct=(spec.evidence.trunc_lo,
                                         spec.evidence.trunc_hi))
    run = {"h": h, "k": k, "seed": seed, "status": "ok",
           "log_marginal": est.log_marginal, "se": est.mc_standard_error,
           "method": est.method, "solver": spec.solver,
           "cpu_seconds": chain.wall_clock_seconds,
           "accept_rate": chain.accept_rate, "chain_csv": None}
    if out_dir is not None:
        chain_name = f"chain_{k}.csv"
        save_chain_csv(chain, Path(out_dir) / chain_name)
        run["chain_csv"] = chain_name
    return run


def _sweep_worker(spec_dict: dict, k: int, out_dir: str, obs_csv: str) -> dict:
    spec = ExperimentSpec.from_dict(spec_dict)
    dataset = load_observations(obs_csv, sigma=spec.sigma)
    try:
        return run_single(spec, dataset, k, Path(out_dir))
    except StepSelectError as exc:
        return {"h": float(spec.h_grid[k]), "k": k, "seed": spec.chain_seed(k),
                "status": f"failed: {exc}", "log_marginal": None, "se": None,
                "method": None, "solver": spec.solver, "cpu_seconds": None,
                "accept_rate": None, "chain_csv": None}


def run_sweep(spec: ExperimentSpec, out_dir, jobs: int = 1,
              dataset: Optional[Dataset] = None) -> dict:
    """Run the whole step-size sweep and leave a run directory behind.

    Steps run independently (parallel when jobs > 1) against the same saved
    observation file; a step that fails (misaligned grid, divergent solve)
    is recorded and skipped, never fatal.  Returns the run record, also
    written to ``record.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = load_or_generate(spec)
    obs_csv = out_dir / "observations.csv"
    save_observations(dataset, obs_csv)
    # round-trip through the file so serial and parallel runs see identical bits
    dataset = load_observations(obs_csv, sigma=spec.sigma)

    ks = list(range(len(spec.h_grid)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_worker, spec.to_dict(), k,
                                   str(out_dir), str(obs_csv)) for k in ks]
            runs = [f.result() for f in futures]
    else:
        runs = [_sweep_worker(spec.to_dict(), k, str(out_dir), str(obs_csv))
                for k in ks]

    record = {"spec": spec.to_dict(), "spec_hash": spec.spec_hash(),
              "version": __version__, "observations_csv": "observations.csv",
              "runs": runs, "curve": None, "recommendation": None}

    ok = [r for r in runs if r["status"] == "ok"]
    if len(ok) >= 3:
        points = [(r["h"], r["log_marginal"], r["se"]) for r in ok]
        try:
            curve = fit_curve(points, p=METHOD_ORDERS[spec.solver],
                              mask_h=spec.regression.mask_h,
                              mask_smallest=spec.regression.mask_smallest)
            record["curve"] = {
                "p": curve.p, "log_fitted_a": curve.log_fitted_a,
                "rel_se_a": curve.rel_se_a, "by": curve.by, "r2": curve.r2,
                "mask_h": curve.h[curve.mask].tolist(),
            }
            order = np.argsort([r["h"] for r in ok])
            cpu = np.asarray([ok[i]["cpu_seconds"] for i in order])
            rep = build_report(curve, cpu, spec.solver,
                               threshold=spec.jeffreys_threshold)
            record["recommendation"] = {"recommended_h": rep.recommended_h,
                                        "speedup": rep.speedup}
        except StepSelectError as exc:
            record["curve_error"] = str(exc)

    with open(out_dir / "record.json", "w") as fh:
        json.dump(record, fh, indent=2)
    with open(out_dir / "evidence.json", "w") as fh:
        json.dump([{"log_marginal": r["log_marginal"], "se": r["se"],
                    "method": r["method"], "h": r["h"], "solver": r["solver"]}
                   for r in ok], fh, indent=2)
    with open(out_dir / "timings.csv", "w") as fh:
        fh.write("h,cpu_seconds\n")
        for r in sorted(ok, key=lambda r: r["h"]):
            fh.write("%.17g,%.6f\n" % (r["h"], r["cpu_seconds"]))
    return record


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def _quadrature_exact(spec: ExperimentSpec, dataset: Dataset):
    """Deterministic exact-model marginal, for models with a closed form."""
    fwd = exact_forward(spec, dataset)
    if fwd is None:
        return None
    prior = spec.build_prior()
    comp = prior.theta[0]
    sigma = dataset.sigma_fixed

    def logf(x: float) -> float:
        from .bayes import log_posterior_unnorm
        phi = ParamVector(theta=np.array([x]), sigma=sigma)
        return log_posterior_unnorm(dataset, prior, phi, fwd)

    hi0 = comp.mean + 12.0 * comp.sd
    lo, hi = bracket_bounds(logf, 1e-8, hi0)
    return quadrature_marginal(dataset, prior, fwd,
                               GridSpec(bounds=((lo, hi),)))


def report(out_dir) -> dict:
    """Write the flat tables for a finished run directory.

    Emits table.csv (exact vs extrapolated marginal), curve.csv
    (h, log marginal, se, Bayes factor, Jeffreys flag), bf_report.json/csv
    (same plus timings), a posterior histogram per step, and summary.txt.
    Everything except the cpu_seconds columns and summary timing lines is
    byte-deterministic given the spec.
    """
    out_dir = Path(out_dir)
    with open(out_dir / "record.json") as fh:
        record = json.load(fh)
    spec = ExperimentSpec.from_dict(record["spec"])
    dataset = load_observations(out_dir / record["observations_csv"],
                                sigma=spec.sigma)
    ok = [r for r in record["runs"] if r["status"] == "ok"]
    ok.sort(key=lambda r: r["h"])

    exact = _quadrature_exact(spec, dataset)
    curve = record.get("curve")

    with open(out_dir / "table.csv", "w") as fh:
        fh.write("sigma,log_exact_marginal,exact_marginal,"
                 "log_extrapolated,extrapolated_marginal\n")
        ex_log = "%.17g" % exact.log_marginal if exact is not None else ""
        ex_lin = "%.17g" % exact.marginal if exact is not None else ""
        if curve is not None:
            fit_log = "%.17g" % curve["log_fitted_a"]
            fit_lin = "%.17g" % math.exp(curve["log_fitted_a"])
        else:
            fit_log = fit_lin = ""
        fh.write("%.17g,%s,%s,%s,%s\n" % (spec.sigma, ex_log, ex_lin,
                                          fit_log, fit_lin))

    log_a = curve["log_fitted_a"] if curve is not None else None
    with open(out_dir / "curve.csv", "w") as fh:
        fh.write("h,log_marginal,se,bf,flag\n")
        for r in ok:
            if log_a is not None:
                bf = math.exp(r["log_marginal"] - log_a)
                flag = int(abs(r["log_marginal"] - log_a)
                           <= -math.log(spec.jeffreys_threshold))
                fh.write("%.17g,%.17g,%.17g,%.17g,%d\n"
                         % (r["h"], r["log_marginal"], r["se"], bf, flag))
            else:
                fh.write("%.17g,%.17g,%.17g,,\n"
                         % (r["h"], r["log_marginal"], r["se"]))

    rec = record.get("recommendation") or {}
    bf_payload = {"solver": spec.solver, "threshold": spec.jeffreys_threshold,
                  "log_fitted_a": log_a,
                  "recommended_h": rec.get("recommended_h"),
                  "speedup": rec.get("speedup"),
                  "steps": []}
    with open(out_dir / "bf_report.csv", "w") as fh:
        fh.write("h,log_marginal,se,bf,flag,cpu_seconds\n")
        for r in ok:
            bf = math.exp(r["log_marginal"] - log_a) if log_a is not None else None
            flag = (bool(abs(r["log_marginal"] - log_a)
                         <= -math.log(spec.jeffreys_threshold))
                    if log_a is not None else None)
            bf_payload["steps"].append(
                {"h": r["h"], "log_marginal": r["log_marginal"], "se": r["se"],
                 "bf": bf, "flag": flag, "cpu_seconds": r["cpu_seconds"]})
            fh.write("%.17g,%.17g,%.17g,%s,%s,%.6f\n"
                     % (r["h"], r["log_marginal"], r["se"],
                        "%.17g" % bf if bf is not None else "",
                        "%d" % flag if flag is not None else "",
                        r["cpu_seconds"]))
    with open(out_dir / "bf_report.json", "w") as fh:
        json.dump(bf_payload, fh, indent=2)

    for r in ok:
        if r["chain_csv"] is None:
            continue
        draws, _ = load_chain_csv(out_dir / r["chain_csv"])
        counts, edges = np.histogram(draws[:, 0], bins=60, density=True)
        with open(out_dir / f"posterior_hist_{r['k']}.csv", "w") as fh:
            fh.write("bin_lo,bin_hi,density\n")
            for i in range(counts.size):
                fh.write("%.17g,%.17g,%.17g\n" % (edges[i], edges[i + 1],
                                                  counts[i]))

    lines = [f"model={spec.model} solver={spec.solver} sigma={spec.sigma:g} "
             f"n_obs={dataset.n} seed={spec.seed}"]
    if exact is not None:
        lines.append(f"exact marginal (quadrature): {exact.marginal:.6g} "
                     f"(log {exact.log_marginal:.6f})")
    if curve is not None:
        lines.append(f"extrapolated marginal: {math.exp(curve['log_fitted_a']):.6g} "
                     f"(log {curve['log_fitted_a']:.6f}, rel se {curve['rel_se_a']:.3g}, "
                     f"fit mask h={curve['mask_h']})")
    for r in ok:
        bf_s = ""
        if log_a is not None:
            bf_s = f"  BF={math.exp(r['log_marginal'] - log_a):.6f}"
        lines.append(f"h={r['h']:<8g} log P = {r['log_marginal']:.6f} "
                     f"+- {r['se']:.4f}{bf_s}  cpu={r['cpu_seconds']:.2f}s "
                     f"accept={r['accept_rate']:.3f}")
    failed = [r for r in record["runs"] if r["status"] != "ok"]
    for r in failed:
        lines.append(f"h={r['h']:<8g} {r['status']}")
    if rec.get("recommended_h") is not None:
        lines.append(f"recommended step: h={rec['recommended_h']:g} "
                     f"(speedup {rec['speedup']:.2f}x over the finest step)")
    elif curve is not None:
        lines.append("recommended step: none admissible at this threshold")
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return record
