"""Full two-level uncertainty propagation for a chosen margin vector.

Outer loop: epistemic realizations (trajectories of the discrepancy model).
Inner loop: probability of failure of the realized limit state over the
aleatory variables, by FORM with a Monte Carlo fallback. The per-future
failure probabilities of initial and final designs recover the distribution
of the probability of failure and validate the cheap analytic constraint
approximation used during margin optimization.
"""

import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np
from scipy.special import ndtri

from . import EstimationError, InfeasibleError, InputError
from .cycle import MarginVector, initial_design, run_cycle
from .gp import ErrorModel, ErrorTrajectory, sample_trajectory
from .margins import approx_exceedance, _FUTURE_STREAM
from .parallel import parallel_map
from .problems import DesignProblem
from .reliability import form_pf, mcs_pf, to_standard_normal, wilson_interval

__all__ = ["FutureRecord", "UqReport", "pf_realization", "full_uq", "validate_approximation", "histogram_counts"]

_MCS_FALLBACK_SAMPLES = 10**5


@dataclass
class FutureRecord:
    """Per-future results of the two-level propagation."""

    seed: int
    z_ini: float
    test_value: float
    q: int
    kind: str
    x_final: np.ndarray
    f_final: float
    margin_final: float
    pf_ini: float
    beta_ini: float
    pf_re: Optional[float]
    beta_re: Optional[float]
    pf_final: float
    beta_final: float
    mpp_uhat_ini: np.ndarray
    form_fallback: bool


@dataclass
class UqReport:
    """Assembled two-level UQ results."""

    k: MarginVector
    m: int
    p_f_star: float
    alpha: float
    x_ini: np.ndarray
    outcomes: list
    exceedance_estimate: float
    exceedance_ci: tuple[float, float]
    margin_beta_correlation: Optional[float]
    margin_beta_correlation_final: Optional[float]
    correlation_note: str
    summary_stats: dict
    approximation_gap: float
    analytic_exceedance: float
    n_fallback: int
    n_aborted: int
    mpp_mean_uhat: Optional[np.ndarray]
    degenerate: bool = False
    degenerate_reason: str = ""


def pf_realization(
    trajectory: ErrorTrajectory,
    x,
    problem: DesignProblem,
    mcs_fallback_seed=0,
) -> tuple[float, float, np.ndarray, bool]:
    """Probability of failure of the realized limit state at a fixed design.

    The FORM value callback samples the trajectory (growing its cache along
    the search path); gradients are finite differences of the smooth
    cache-conditional mean, which tracks the realized function ever closer as
    the cache densifies and avoids the noise floor of differencing fresh
    lazily-sampled values.

    Returns (pf, beta, mpp_uhat, used_fallback).
    """
    x = np.asarray(x, dtype=float)

    def realized(xv, u):
        joint = np.concatenate([xv, np.asarray(u, dtype=float)])
        return float(np.asarray(problem.lofi_limit_state(xv, u))) + trajectory(joint)

    def smoothed(xv, u):
        joint = np.concatenate([xv, np.asarray(u, dtype=float)])
        return float(np.asarray(problem.lofi_limit_state(xv, u))) + trajectory.posterior_mean(joint)

    # realized surfaces shift slightly as the cache grows, so the iterate
    # tolerance is practical rather than the smooth-case default
    res = form_pf(realized, problem.aleatory, x, grad_limit_state=smoothed, tol=1e-4)
    if res.converged:
        return res.pf, res.beta, res.mpp_uhat, False

    # frozen-mean Monte Carlo fallback: the cache-conditional mean stands in
    # for the realized function, flagged to the caller
    pf, _ = mcs_pf(
        lambda xv, u: _frozen_mean_batch(trajectory, problem, xv, u),
        problem.aleatory,
        x,
        _MCS_FALLBACK_SAMPLES,
        mcs_fallback_seed,
    )
    pf = min(max(pf, 1e-12), 1.0 - 1e-12)
    beta = float(-ndtri(pf))
    return pf, beta, res.mpp_uhat, True


def _frozen_mean_batch(trajectory, problem, x, u):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    gl = np.asarray(problem.lofi_limit_state(x, u), dtype=float)
    joint = np.hstack([np.broadcast_to(x, (len(u), len(x))), u])
    return gl + trajectory.posterior_mean(joint)


def _uq_future(
    i: int,
    model: ErrorModel,
    problem: DesignProblem,
    u_cons: np.ndarray,
    k: MarginVector,
    x_ini: np.ndarray,
    master_seed: int,
) -> Optional[FutureRecord]:
    traj = sample_trajectory(model, [master_seed, _FUTURE_STREAM, i])
    try:
        outcome = run_cycle(model, traj, problem, u_cons, k, x_ini=x_ini, seed=i)
    except InfeasibleError:
        return None
    pf_ini, beta_ini, mpp_uhat, fb1 = pf_realization(
        traj, x_ini, problem, mcs_fallback_seed=[master_seed, 13, i]
    )
    if outcome.q:
        pf_re, beta_re, _, fb2 = pf_realization(
            traj, outcome.x_final, problem, mcs_fallback_seed=[master_seed, 17, i]
        )
        pf_final, beta_final = pf_re, beta_re
        fallback = fb1 or fb2
    else:
        pf_re, beta_re = None, None
        pf_final, beta_final = pf_ini, beta_ini
        fallback = fb1
    return FutureRecord(
        seed=i,
        z_ini=outcome.z_ini,
        test_value=outcome.test_value,
        q=outcome.q,
        kind=outcome.redesign_kind,
        x_final=outcome.x_final,
        f_final=outcome.f_final,
        margin_final=outcome.margin_final,
        pf_ini=pf_ini,
        beta_ini=beta_ini,
        pf_re=pf_re,
        beta_re=beta_re,
        pf_final=pf_final,
        beta_final=beta_final,
        mpp_uhat_ini=mpp_uhat,
        form_fallback=fallback,
    )


def _pearson(a, b) -> Optional[float]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or np.std(a) == 0 or np.std(b) == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def _kind_stats(records: list, f_ini: float) -> dict:
    stats = {}
    for kind in ("none", "safety", "performance"):
        sel = [r for r in records if r.kind == kind]
        if not sel:
            stats[kind] = {"count": 0}
            continue
        fs = np.array([r.f_final for r in sel])
        betas = np.array([r.beta_final for r in sel])
        margins = np.array([r.margin_final for r in sel])
        stats[kind] = {
            "count": len(sel),
            "mean_f": float(np.mean(fs)),
            "mean_f_change_pct": float(100.0 * (np.mean(fs) - f_ini) / f_ini),
            "mean_beta": float(np.mean(betas)),
            "mean_margin": float(np.mean(margins)),
            "q05_f": float(np.quantile(fs, 0.05)),
            "q95_f": float(np.quantile(fs, 0.95)),
        }
    return stats


def full_uq(
    model: ErrorModel,
    problem: DesignProblem,
    u_cons,
    k: MarginVector,
    m: int,
    master_seed: int = 0,
    jobs: int = 1,
    x_ini=None,
) -> UqReport:
    """Two-level mixed uncertainty propagation over m futures."""
    if m < 1000:
        raise InputError("m must be >= 1000 for the two-level propagation")
    if m < 1900 and problem.alpha <= 0.05:
        warnings.warn(
            f"m={m} is small for estimating tail probabilities near alpha={problem.alpha}",
            stacklevel=2,
        )
    u_cons = np.asarray(u_cons, dtype=float)
    if x_ini is None:
        x_ini = initial_design(model, problem, u_cons, k.k_ini)
    x_ini = np.asarray(x_ini, dtype=float)
    f_ini = float(np.asarray(problem.objective(x_ini, u_cons)))

    joint = np.concatenate([x_ini, u_cons])
    _, sd = model.predict_one(joint)
    if sd <= 1e-12:
        traj = sample_trajectory(model, [master_seed, _FUTURE_STREAM, 0])
        pf, beta, mpp, fb = pf_realization(traj, x_ini, problem)
        exceed = float(pf >= problem.p_f_star)
        return UqReport(
            k=k, m=m, p_f_star=problem.p_f_star, alpha=problem.alpha, x_ini=x_ini,
            outcomes=[],
            exceedance_estimate=exceed,
            exceedance_ci=(exceed, exceed),
            margin_beta_correlation=None,
            margin_beta_correlation_final=None,
            correlation_note="undefined: degenerate model, all futures identical",
            summary_stats={},
            approximation_gap=float("nan"),
            analytic_exceedance=float("nan"),
            n_fallback=int(fb),
            n_aborted=0,
            mpp_mean_uhat=mpp,
            degenerate=True,
            degenerate_reason="predictive sd at the test point is zero",
        )

    worker = partial(
        _uq_future,
        model=model,
        problem=problem,
        u_cons=u_cons,
        k=k,
        x_ini=x_ini,
        master_seed=master_seed,
    )
    chunks = max(1, m // max(1, 8 * jobs))
    results = parallel_map(worker, range(m), jobs=jobs, chunksize=chunks)
    records = [r for r in results if r is not None]
    n_aborted = m - len(records)
    if n_aborted > 0.01 * m:
        raise EstimationError(
            f"{n_aborted}/{m} futures aborted; partial results preserved in the exception"
        )

    pf_final = np.array([r.pf_final for r in records])
    hits = int(np.sum(pf_final >= problem.p_f_star))
    exceed = hits / len(records)
    ci = wilson_interval(hits, len(records))
    margins = [r.test_value for r in records]
    corr_ini = _pearson(margins, [r.beta_ini for r in records])
    corr_final = _pearson(margins, [r.beta_final for r in records])
    analytic = approx_exceedance(k)
    mpp_mean = np.mean(np.stack([r.mpp_uhat_ini for r in records]), axis=0)

    return UqReport(
        k=k,
        m=m,
        p_f_star=problem.p_f_star,
        alpha=problem.alpha,
        x_ini=x_ini,
        outcomes=records,
        exceedance_estimate=float(exceed),
        exceedance_ci=ci,
        margin_beta_correlation=corr_ini,
        margin_beta_correlation_final=corr_final,
        correlation_note=(
            "margin_beta_correlation pairs the observed test margin with the "
            "initial design's realized reliability index; the _final variant "
            "pairs it with the post-redesign index"
        ),
        summary_stats=_kind_stats(records, f_ini),
        approximation_gap=abs(float(exceed) - analytic),
        analytic_exceedance=analytic,
        n_fallback=int(sum(r.form_fallback for r in records)),
        n_aborted=n_aborted,
        mpp_mean_uhat=mpp_mean,
    )


def validate_approximation(report: UqReport, k: MarginVector) -> dict:
    """Compare the analytic constraint approximation against the MCS estimate."""
    if report.degenerate:
        return {
            "skipped": True,
            "reason": "degenerate uncertainty: analytic approximation not meaningful",
        }
    analytic = approx_exceedance(k)
    lo, hi = report.exceedance_ci
    return {
        "skipped": False,
        "analytic": analytic,
        "mcs_estimate": report.exceedance_estimate,
        "ci_low": lo,
        "ci_high": hi,
        "gap": abs(report.exceedance_estimate - analytic),
        "analytic_within_ci": bool(lo <= analytic <= hi),
    }


def histogram_counts(values, bins: int = 40) -> dict:
    """Fixed-bin histogram as plain arrays (plotting stays downstream)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {"edges": [], "counts": []}
    counts, edges = np.histogram(values, bins=bins)
    return {"edges": edges.tolist(), "counts": counts.tolist()}
