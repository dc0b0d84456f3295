"""Preliminary reliability-based design optimization and conservative values.

The preliminary step works with the epistemic-mean limit state only: design
against aleatory uncertainty at a target failure probability, then fix the
aleatory variables at the most probable failure point of that optimum. A
percentile mode covers problems where conservative quantiles are prescribed
directly instead.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri
from scipy import optimize as sopt

from . import InfeasibleError, InputError
from .optimize import constrained_minimize
from .problems import DesignProblem
from .reliability import AleatoryDistribution, form_pf, from_standard_normal, to_standard_normal

__all__ = [
    "ConservativeValues",
    "mean_limit_state",
    "solve_rbdo",
    "find_mpp",
    "percentile_conservative",
    "conservative_values",
]


@dataclass
class ConservativeValues:
    """Fixed aleatory vector used inside deterministic design."""

    u_cons: np.ndarray
    x_rbdo: Optional[np.ndarray]
    beta_target: Optional[float]
    mode: str

    def to_dict(self) -> dict:
        return {
            "u_cons": np.asarray(self.u_cons).tolist(),
            "x_rbdo": None if self.x_rbdo is None else np.asarray(self.x_rbdo).tolist(),
            "beta_target": self.beta_target,
            "mode": self.mode,
        }

    @staticmethod
    def from_dict(d: dict) -> "ConservativeValues":
        return ConservativeValues(
            u_cons=np.array(d["u_cons"], dtype=float),
            x_rbdo=None if d["x_rbdo"] is None else np.array(d["x_rbdo"], dtype=float),
            beta_target=d["beta_target"],
            mode=d["mode"],
        )


def mean_limit_state(problem: DesignProblem, model=None, include_error_mean: bool = True):
    """Epistemic-mean limit state g_L + ebar (or raw g_L when disabled).

    Returns a scalar-valued callable (x, u); the error-model mean is
    evaluated pointwise on the joint vector.
    """
    if model is None or not include_error_mean:
        return lambda x, u: float(np.asarray(problem.lofi_limit_state(x, u)))

    def gbar(x, u):
        joint = np.concatenate([np.ravel(x), np.ravel(u)])
        m, _ = model.predict_one(joint)
        return float(np.asarray(problem.lofi_limit_state(x, u))) + m

    return gbar


def solve_rbdo(problem: DesignProblem, mean_model: Callable) -> np.ndarray:
    """Minimize the objective subject to a FORM reliability constraint.

    The probabilistic constraint P[gbar <= 0] <= p_f_star is enforced as
    beta(x) >= beta_target through an inner FORM run per outer iterate.
    """
    beta_target = float(-ndtri(problem.p_f_star))

    # tight FORM tolerance keeps beta(x) smooth enough for the outer
    # optimizer's finite differences
    def beta_of(x):
        return form_pf(mean_model, problem.aleatory, x, tol=1e-10, max_iter=200).beta

    def objective(x):
        if problem.objective_depends_on_aleatory:
            return float(np.asarray(problem.objective(x, problem.u_mean())))
        return float(np.asarray(problem.objective(x, None)))

    cons = [lambda x: beta_of(x) - beta_target]
    cons.extend(problem.deterministic_constraints)
    return constrained_minimize(
        objective,
        problem.design_bounds,
        cons,
        n_starts=5,
        label="preliminary RBDO",
    )


def find_mpp(
    x_rbdo,
    mean_model: Callable,
    dists: Sequence[AleatoryDistribution],
) -> ConservativeValues:
    """Most probable failure point of the mean model at the RBDO optimum.

    FORM first; on non-convergence falls back to direct minimization of
    ||uhat||^2 with the limit surface as an equality constraint.
    """
    x_rbdo = np.asarray(x_rbdo, dtype=float)
    res = form_pf(mean_model, dists, x_rbdo, tol=1e-10, max_iter=200)
    if res.converged:
        uhat = res.mpp_uhat
        beta = abs(res.beta)
    else:
        def surface(uhat):
            return float(mean_model(x_rbdo, from_standard_normal(uhat, dists)))

        start = res.mpp_uhat if np.all(np.isfinite(res.mpp_uhat)) else np.zeros(len(dists))
        opt = sopt.minimize(
            lambda uh: float(uh @ uh),
            start,
            method="SLSQP",
            constraints=[{"type": "eq", "fun": surface}],
            options={"ftol": 1e-12, "maxiter": 300},
        )
        if not opt.success or abs(surface(opt.x)) > 1e-6:
            raise InfeasibleError("MPP search failed: FORM and direct minimization both diverged")
        uhat = opt.x
        beta = float(np.linalg.norm(uhat))
    return ConservativeValues(
        u_cons=from_standard_normal(uhat, dists),
        x_rbdo=x_rbdo,
        beta_target=beta,
        mode="rbdo_mpp",
    )


def percentile_conservative(
    dists: Sequence[AleatoryDistribution], levels: Sequence[float]
) -> ConservativeValues:
    """Componentwise inverse-CDF conservative values."""
    levels = np.asarray(levels, dtype=float)
    if levels.shape != (len(dists),):
        raise InputError("one percentile level per aleatory variable required")
    if np.any(levels <= 0) or np.any(levels >= 1):
        raise InputError("levels must lie in (0, 1)")
    u = np.array([d.ppf(q) for d, q in zip(dists, levels)])
    return ConservativeValues(
        u_cons=u,
        x_rbdo=None,
        beta_target=None,
        mode=f"percentile({levels.tolist()})",
    )


def conservative_values(problem: DesignProblem, model=None, include_error_mean: bool = True) -> ConservativeValues:
    """Dispatch on the problem's conservative-value mode."""
    if problem.u_cons_mode == "percentile":
        if not problem.percentile_levels:
            raise InputError("percentile mode requires problem.percentile_levels")
        return percentile_conservative(problem.aleatory, problem.percentile_levels)
    gbar = mean_limit_state(problem, model, include_error_mean=include_error_mean)
    x_rbdo = solve_rbdo(problem, gbar)
    return find_mpp(x_rbdo, gbar, problem.aleatory)
