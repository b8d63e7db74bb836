"""Evidence-vs-step-size analysis.

A solver of order p perturbs the marginal likelihood as

    P_h(y)  =  a + b h^p + o(h^p),        a = exact-model marginal,

so a weighted linear regression of per-step marginals on h^p recovers the
exact marginal as the intercept without ever running an exact solve.  Bayes
factors of each step against that intercept, read on Jeffreys' "not worth
more than a bare mention" window, then pick the coarsest step that is
statistically indistinguishable from exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson

from .bayes import Dataset, ParamVector, Prior, log_posterior_unnorm
from .errors import BoundsTooTight, IllConditionedFit, NoAdmissibleStep

DEFAULT_THRESHOLD = 0.99    # Jeffreys: BF in [0.99, 1/0.99] is "no evidence"


@dataclass
class EvidenceCurve:
    """Per-step marginals plus the fitted a + b h^p extrapolation.

    Points are stored sorted by increasing h; ``mask`` marks the points the
    regression used.  ``log_fitted_a`` is the authoritative intercept (the
    linear-scale ``fitted_a`` underflows below ~1e-300).
    """

    p: int
    h: np.ndarray
    log_marginal: np.ndarray
    se: np.ndarray
    mask: np.ndarray
    fitted_a: float
    fitted_b: float
    log_fitted_a: float
    rel_se_a: float
    by: float              # B_y = -b/a, the leading relative-error coefficient
    r2: float


def _as_points(points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    hs, logs, ses = [], [], []
    for pt in points:
        if hasattr(pt, "log_marginal"):
            if pt.h is None:
                raise ValueError("evidence estimate lacks its step size h")
            hs.append(float(pt.h))
            logs.append(float(pt.log_marginal))
            ses.append(float(pt.mc_standard_error))
        else:
            h, lm, se = pt
            hs.append(float(h)); logs.append(float(lm)); ses.append(float(se))
    return np.asarray(hs), np.asarray(logs), np.asarray(ses)


def fit_curve(points: Sequence, p: int, mask_h: Optional[Sequence[float]] = None,
              mask_smallest: int = 4) -> EvidenceCurve:
    """Weighted least squares of the marginal (linear scale) on h^p.

    ``points`` is a sequence of EvidenceEstimates (carrying h) or
    (h, log_marginal, se) triples.  The fit runs on the ``mask_smallest``
    smallest steps unless ``mask_h`` names the steps explicitly — the model
    P_h = a + b h^p only holds in the asymptotic regime, so coarse points
    should stay out of the regression even when they belong on the plot.

    Weights are 1/se^2 on the linear scale (uniform when every se is zero,
    e.g. quadrature input).  Raises IllConditionedFit when the masked grid
    spans less than a factor 2 in h^p or the intercept comes out
    non-positive.
    """
    hs, logs, ses = _as_points(points)
    if hs.size < 3:
        raise ValueError("need at least three points to fit the evidence curve")
    if np.unique(hs).size != hs.size:
        raise ValueError("duplicate step sizes in the evidence curve")
    order = np.argsort(hs)
    hs, logs, ses = hs[order], logs[order], ses[order]

    if mask_h is not None:
        mask = np.isin(hs, np.asarray(list(mask_h), dtype=float))
        if mask.sum() < 3:
            raise ValueError("mask_h selects fewer than three points")
    else:
        mask = np.zeros(hs.size, dtype=bool)
        mask[:min(mask_smallest, hs.size)] = True

    hm = hs[mask]
    if (hm.max() / hm.min()) ** p < 2.0:
        raise IllConditionedFit(
            f"h^p spans only a factor {(hm.max() / hm.min()) ** p:.3g} over the "
            "fit mask; intercept and slope are not separable")

    shift = float(np.max(logs[mask]))
    m = np.exp(logs[mask] - shift)
    se_m = ses[mask]
    if np.all(se_m == 0.0):
        w = np.ones_like(m)
    else:
        # weights 1/(se * m)^2 on the linear scale, assembled in log space:
        # marginals spanning hundreds of log units would overflow otherwise.
        # Zero-se points get floored 1e-3 below the smallest real se.
        pos = se_m > 0.0
        log_se_lin = np.full(m.size, -np.inf)
        log_se_lin[pos] = np.log(se_m[pos]) + (logs[mask][pos] - shift)
        log_floor = float(np.min(log_se_lin[pos])) + math.log(1e-3)
        log_w = -2.0 * np.maximum(log_se_lin, log_floor)
        rel = np.exp(log_w - float(np.max(log_w)))
        if int((rel > 1e-12).sum()) < 3:
            raise IllConditionedFit(
                "the evidence spread across the masked points dwarfs their "
                "standard errors, so the weighted fit would hang on fewer "
                "than three points; the grid is outside the h^p regime")
        w = np.exp(np.minimum(log_w, 700.0))

    X = np.column_stack([np.ones_like(hm), hm ** p])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], m * sw, rcond=None)
    a_s, b_s = float(coef[0]), float(coef[1])
    if a_s <= 0.0:
        raise IllConditionedFit("extrapolated marginal is non-positive; the "
                                "masked points are outside the h^p regime")

    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    rel_se_a = math.sqrt(cov[0, 0]) / a_s

    resid = m - X @ coef
    sst = float(np.sum(w * (m - np.average(m, weights=w)) ** 2))
    r2 = 1.0 - float(np.sum(w * resid ** 2)) / sst if sst > 0.0 else 1.0

    return EvidenceCurve(p=int(p), h=hs, log_marginal=logs, se=ses, mask=mask,
                         fitted_a=a_s * math.exp(shift),
                         fitted_b=b_s * math.exp(shift),
                         log_fitted_a=shift + math.log(a_s),
                         rel_se_a=rel_se_a, by=-b_s / a_s, r2=r2)


def _as_log_marginal(ev) -> float:
    if hasattr(ev, "log_marginal") and not hasattr(ev, "log_fitted_a"):
        return float(ev.log_marginal)
    if hasattr(ev, "log_fitted_a"):
        return float(ev.log_fitted_a)
    ev = float(ev)
    if ev <= 0.0:
        raise ValueError("a plain-number marginal must be positive")
    return math.log(ev)


def bayes_factor(ev1, ev2) -> float:
    """Ratio of two marginals, computed through their logs.

    Accepts EvidenceEstimates, fitted EvidenceCurves (whose intercept stands
    in for the exact model) or plain positive numbers, in any mix — so
    comparing two extrapolated models needs no extra machinery.
    """
    return math.exp(_as_log_marginal(ev1) - _as_log_marginal(ev2))


def within_jeffreys(bf: float, threshold: float = DEFAULT_THRESHOLD) -> bool:
    """True when the Bayes factor is inside [threshold, 1/threshold]."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    return abs(math.log(bf)) <= -math.log(threshold)


def recommend_step(curve: EvidenceCurve, cpu_seconds,
                   threshold: float = DEFAULT_THRESHOLD) -> Tuple[float, float]:
    """Largest step whose Bayes factor against the extrapolated exact
    marginal sits inside the Jeffreys window, with its measured speedup.

    ``cpu_seconds`` aligns with ``curve.h`` (ascending).  The speedup is
    cpu(h_min) / cpu(h_recommended): time bought relative to the finest
    sweep member.  Raises NoAdmissibleStep when even the finest step falls
    outside the window — the signature of a solver order too low to ever
    flatten out on this grid.
    """
    cpu = np.asarray(cpu_seconds, dtype=float)
    if cpu.shape != curve.h.shape:
        raise ValueError("cpu_seconds must align with curve.h")
    log_bf = curve.log_marginal - curve.log_fitted_a
    flags = np.abs(log_bf) <= -math.log(threshold)
    if not flags.any():
        raise NoAdmissibleStep(
            f"no step in {curve.h.tolist()} has a Bayes factor within "
            f"[{threshold}, {1 / threshold:.6g}] of the extrapolated marginal")
    idx = int(np.max(np.where(flags)[0]))
    return float(curve.h[idx]), float(cpu[0] / cpu[idx])


@dataclass
class BfReport:
    """Flat per-step table plus the recommendation, ready to serialize."""

    solver: str
    p: int
    threshold: float
    h: np.ndarray
    log_marginal: np.ndarray
    se: np.ndarray
    bf: np.ndarray
    flag: np.ndarray
    cpu_seconds: np.ndarray
    log_fitted_a: float
    rel_se_a: float
    recommended_h: Optional[float]
    speedup: Optional[float]

    def rows(self):
        for i in range(self.h.size):
            yield {"h": float(self.h[i]),
                   "log_marginal": float(self.log_marginal[i]),
                   "se": float(self.se[i]), "bf": float(self.bf[i]),
                   "flag": bool(self.flag[i]),
                   "cpu_seconds": float(self.cpu_seconds[i])}

    def as_dict(self) -> dict:
        return {"solver": self.solver, "p": self.p, "threshold": self.threshold,
                "log_fitted_a": self.log_fitted_a, "rel_se_a": self.rel_se_a,
                "recommended_h": self.recommended_h, "speedup": self.speedup,
                "steps": list(self.rows())}


def build_report(curve: EvidenceCurve, cpu_seconds, solver: str,
                 threshold: float = DEFAULT_THRESHOLD) -> BfReport:
    """Assemble the per-step Bayes-factor table around a fitted curve.

    Unlike :func:`recommend_step` this never raises on a hopeless sweep; the
    recommendation fields are simply left empty, because a report of the
    failure is still a report.
    """
    cpu = np.asarray(cpu_seconds, dtype=float)
    log_bf = curve.log_marginal - curve.log_fitted_a
    flags = np.abs(log_bf) <= -math.log(threshold)
    try:
        rec_h, speedup = recommend_step(curve, cpu, threshold)
    except NoAdmissibleStep:
        rec_h, speedup = None, None
    return BfReport(solver=solver, p=curve.p, threshold=threshold, h=curve.h,
                    log_marginal=curve.log_marginal, se=curve.se,
                    bf=np.exp(log_bf), flag=flags, cpu_seconds=cpu,
                    log_fitted_a=curve.log_fitted_a, rel_se_a=curve.rel_se_a,
                    recommended_h=rec_h, speedup=speedup)


# ---------------------------------------------------------------------------
# posterior discrepancy between two forward maps
# ---------------------------------------------------------------------------

def posterior_discrepancy(dataset: Dataset, prior: Prior, forward1: Callable,
                          forward2: Callable, bounds: Tuple[float, float],
                          statistic: str = "mean", n0: int = 129,
                          rel_tol: float = 1e-3, max_refines: int = 10,
                          boundary_ratio: float = 1e-12) -> float:
    """Quadrature distance between the posteriors under two forward maps.

    Both posteriors are normalised on the same refined grid over ``bounds``;
    ``statistic`` selects |mean1 - mean2| ("mean") or the total-variation
    distance 0.5 * int |p1 - p2| ("tv").  Only one-dimensional parameter
    spaces are supported.  Refinement stops when the statistic is stable to
    ``rel_tol`` relatively (1e-12 absolutely).
    """
    if statistic not in ("mean", "tv"):
        raise ValueError("statistic must be 'mean' or 'tv'")
    if dataset.sigma_fixed is None:
        raise ValueError("posterior_discrepancy needs dataset.sigma_fixed")
    sigma = dataset.sigma_fixed
    lo, hi = float(bounds[0]), float(bounds[1])

    def logp(forward, x):
        phi = ParamVector(theta=np.array([x]), sigma=sigma)
        return log_posterior_unnorm(dataset, prior, phi, forward)

    n = 129
    while n < n0:
        n = 2 * n - 1
    xs = np.linspace(lo, hi, n)
    v1 = np.array([logp(forward1, x) for x in xs])
    v2 = np.array([logp(forward2, x) for x in xs])
    for v in (v1, v2):
        peak = float(np.max(v))
        if max(v[0], v[-1]) > peak + math.log(boundary_ratio):
            raise BoundsTooTight("posterior mass reaches the window boundary")

    def stat(xs, v1, v2) -> float:
        out = []
        dens = []
        for v in (v1, v2):
            shift = float(np.max(v))
            d = np.exp(v - shift)
            z = float(simpson(d, x=xs))
            dens.append(d / z)
        p1, p2 = dens
        if statistic == "mean":
            return abs(float(simpson(xs * p1, x=xs)) - float(simpson(xs * p2, x=xs)))
        return 0.5 * float(simpson(np.abs(p1 - p2), x=xs))

    s = stat(xs, v1, v2)
    for _ in range(max_refines):
        mids = 0.5 * (xs[:-1] + xs[1:])
        m1 = np.array([logp(forward1, x) for x in mids])
        m2 = np.array([logp(forward2, x) for x in mids])
        xs2 = np.empty(2 * xs.size - 1)
        xs2[::2], xs2[1::2] = xs, mids
        w1 = np.empty_like(xs2); w1[::2], w1[1::2] = v1, m1
        w2 = np.empty_like(xs2); w2[::2], w2[1::2] = v2, m2
        xs, v1, v2 = xs2, w1, w2
        s_new = stat(xs, v1, v2)
        done = abs(s_new - s) <= max(1e-12, rel_tol * abs(s_new))
        s = s_new
        if done:
            return s
    return s
