"""Optimization of the margin vector under analytic probability constraints.

The expected objective is estimated by Monte Carlo over simulated futures
with common random numbers (the same master seed yields the same trajectory
seeds for every candidate margin vector, making each evaluation
deterministic). The redesign probability and the post-redesign negative
margin probability are analytic in the margin vector, so feasibility of a
candidate is exact and free of Monte Carlo noise.
"""

from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

from . import DegenerateTestError, EstimationError, InfeasibleError, InputError
from .cmaes import cma_minimize
from .cycle import MarginVector, initial_design, run_cycle
from .gp import ErrorModel, sample_trajectory
from .parallel import parallel_map
from .problems import DesignProblem
from .rbdo import ConservativeValues

__all__ = [
    "MarginOptProblem",
    "TradeoffPoint",
    "probability_of_redesign",
    "approx_exceedance",
    "expected_objective",
    "optimize_margins",
    "tradeoff_sweep",
]

_FUTURE_STREAM = 7  # seed-tuple tag separating future streams from other draws
_SIGMA_FLOOR = 1e-12
_K_BOUNDS = [(0.0, 4.0)] * 4


def probability_of_redesign(k: MarginVector) -> float:
    """Analytic chance the standardized test falls outside [-k_lb, k_ub]."""
    return float(ndtr(-k.k_lb) + 1.0 - ndtr(k.k_ub))


def approx_exceedance(k: MarginVector) -> float:
    """Post-redesign probability of a negative margin at the conservative point.

    Mixture of the kept branch (standard normal truncated to the pass band,
    evaluated at -k_ini) and the redesigned branch (fresh normal at -k_re).
    """
    from .reliability import truncated_normal_cdf

    p_re = probability_of_redesign(k)
    kept = truncated_normal_cdf(-k.k_ini, -k.k_lb, k.k_ub)
    return float((1.0 - p_re) * kept + p_re * ndtr(-k.k_re))


@dataclass
class MarginOptProblem:
    """Inputs for one margin optimization at a fixed redesign-probability cap."""

    problem: DesignProblem
    model: ErrorModel
    u_cons: ConservativeValues
    p_f_star: float
    alpha: float
    p_re_star: float
    m: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if not 0 < self.p_f_star < 1:
            raise InputError("p_f_star must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")
        if not 0 <= self.p_re_star <= 1:
            raise InputError("p_re_star must lie in [0, 1]")
        if self.m < 100:
            raise InputError("m must be >= 100")


@dataclass
class TradeoffPoint:
    """One optimized point of the performance / redesign-risk tradeoff."""

    p_re_star: float
    k_opt: MarginVector
    expected_f: float
    p_re: float
    neg_margin_prob: float
    cov_expected_f: float
    penalty_lambda: float = 0.0
    n_evals: int = 0
    feasible: bool = True
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "p_re_star": self.p_re_star,
            "k": self.k_opt.as_array().tolist(),
            "expected_f": self.expected_f,
            "p_re": self.p_re,
            "neg_margin_prob": self.neg_margin_prob,
            "cov_expected_f": self.cov_expected_f,
            "penalty_lambda": self.penalty_lambda,
            "n_evals": self.n_evals,
            "feasible": self.feasible,
            "error": self.error,
        }


def _aleatory_block(problem: DesignProblem, n: int = 64) -> np.ndarray:
    """Fixed low-discrepancy aleatory sample for u-dependent objectives."""
    sampler = qmc.Sobol(d=len(problem.aleatory), scramble=True, seed=20240601)
    q = sampler.random(n)
    cols = [d.ppf(np.clip(q[:, j], 1e-12, 1 - 1e-12)) for j, d in enumerate(problem.aleatory)]
    return np.column_stack(cols)


def _future_objective(problem: DesignProblem, x_final, u_cons, u_block) -> float:
    if problem.objective_depends_on_aleatory:
        vals = [float(np.asarray(problem.objective(x_final, u))) for u in u_block]
        return float(np.mean(vals))
    return float(np.asarray(problem.objective(x_final, u_cons)))


def expected_objective(
    model: ErrorModel,
    problem: DesignProblem,
    u_cons,
    k: MarginVector,
    m: int,
    master_seed: int,
    x_ini=None,
) -> tuple[float, float]:
    """Mean final objective over m simulated futures, with estimator CoV.

    Common random numbers: future i always uses trajectory seed
    (master_seed, stream, i), independent of k.
    """
    if m < 100:
        raise InputError("m must be >= 100")
    u_cons = np.asarray(u_cons, dtype=float)
    if x_ini is None:
        x_ini = initial_design(model, problem, u_cons, k.k_ini)

    joint = np.concatenate([np.ravel(x_ini), u_cons])
    _, sd = model.predict_one(joint)
    u_block = _aleatory_block(problem) if problem.objective_depends_on_aleatory else None
    if sd <= _SIGMA_FLOOR:
        # degenerate model: every future is the accepted initial design
        return _future_objective(problem, x_ini, u_cons, u_block), 0.0

    fs = []
    aborted = 0
    for i in range(m):
        traj = sample_trajectory(model, [master_seed, _FUTURE_STREAM, i])
        try:
            outcome = run_cycle(model, traj, problem, u_cons, k, x_ini=x_ini, seed=i)
        except (InfeasibleError, DegenerateTestError):
            aborted += 1
            continue
        fs.append(_future_objective(problem, outcome.x_final, u_cons, u_block))
    if aborted > 0.01 * m:
        raise EstimationError(f"{aborted}/{m} futures aborted; estimate unusable")
    fs = np.asarray(fs)
    est = float(np.mean(fs))
    se = float(np.std(fs, ddof=1) / np.sqrt(len(fs))) if len(fs) > 1 else 0.0
    return est, se / abs(est) if est != 0 else se


def _penalized(k_arr, mop: MarginOptProblem, lam: float, registry: list) -> float:
    k = MarginVector.from_array(k_arr)
    p_re = probability_of_redesign(k)
    exceed = approx_exceedance(k)
    est, cov = expected_objective(
        mop.model, mop.problem, mop.u_cons.u_cons, k, mop.m, mop.master_seed
    )
    viol_a = max(0.0, exceed - mop.alpha)
    viol_p = max(0.0, p_re - mop.p_re_star)
    if viol_a == 0.0 and viol_p == 0.0:
        registry.append((est, k, p_re, exceed, cov))
    return est + lam * viol_a**2 + lam * viol_p**2


def optimize_margins(mop: MarginOptProblem, max_gens: int = 200) -> TradeoffPoint:
    """CMA-ES over the margin box with quadratic constraint penalties.

    The returned point is the best candidate whose analytic constraints hold
    exactly; the penalized objective only steers the search. One restart from
    a conservative corner covers the case where the first run never touches
    the feasible set.
    """
    registry: list = []
    # probe a conservative start for the penalty scale
    k0 = np.array([3.5, 3.5, 3.5, 3.5])
    est0, _ = expected_objective(
        mop.model, mop.problem, mop.u_cons.u_cons, MarginVector.from_array(k0), mop.m,
        mop.master_seed,
    )
    lam = 1000.0 * max(1.0, abs(est0))

    fun = partial(_penalized, mop=mop, lam=lam, registry=registry)
    n_evals = 0
    for attempt, start in enumerate((k0, np.array([3.9, 3.9, 3.9, 3.9]))):
        res = cma_minimize(
            fun,
            start,
            sigma0=0.5,
            bounds=_K_BOUNDS,
            max_gens=max_gens,
            seed=[mop.master_seed, 11, attempt],
            tol_fun=1e-7 * max(1.0, abs(est0)),
            tol_x=1e-4,
        )
        n_evals += res.n_evals
        if registry:
            break
    if not registry:
        k_best = MarginVector.from_array(res.x)
        raise InfeasibleError(
            "margin optimization found no feasible candidate; best attained "
            f"k={k_best.as_array().tolist()}, p_re={probability_of_redesign(k_best):.4g} "
            f"(cap {mop.p_re_star}), exceedance={approx_exceedance(k_best):.4g} "
            f"(alpha {mop.alpha})"
        )

    est, k, p_re, exceed, cov = min(registry, key=lambda t: t[0])
    return TradeoffPoint(
        p_re_star=mop.p_re_star,
        k_opt=k,
        expected_f=est,
        p_re=p_re,
        neg_margin_prob=exceed,
        cov_expected_f=cov,
        penalty_lambda=lam,
        n_evals=n_evals,
        feasible=True,
    )


def _sweep_worker(cap: float, mop: MarginOptProblem, max_gens: int) -> TradeoffPoint:
    point_mop = MarginOptProblem(
        problem=mop.problem,
        model=mop.model,
        u_cons=mop.u_cons,
        p_f_star=mop.p_f_star,
        alpha=mop.alpha,
        p_re_star=cap,
        m=mop.m,
        master_seed=mop.master_seed,
    )
    try:
        return optimize_margins(point_mop, max_gens=max_gens)
    except Exception as exc:  # per-point failures recorded, sweep continues
        return TradeoffPoint(
            p_re_star=cap,
            k_opt=MarginVector(4.0, 4.0, 4.0, 4.0),
            expected_f=float("nan"),
            p_re=float("nan"),
            neg_margin_prob=float("nan"),
            cov_expected_f=float("nan"),
            feasible=False,
            error=f"{type(exc).__name__}: {exc}",
        )


def tradeoff_sweep(
    mop: MarginOptProblem,
    caps: Sequence[float],
    max_gens: int = 200,
    jobs: int = 1,
) -> list[TradeoffPoint]:
    """One margin optimization per redesign-probability cap, shared seed bank."""
    caps = list(caps)
    if not caps:
        raise InputError("caps list must be nonempty")
    worker = partial(_sweep_worker, mop=mop, max_gens=max_gens)
    return parallel_map(worker, caps, jobs=jobs)
