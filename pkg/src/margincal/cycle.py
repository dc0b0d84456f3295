"""One deterministic design / test / redesign cycle for a single future.

A "future" is one trajectory of the discrepancy model. The initial design
depends only on the model (not the trajectory), so callers amortize it across
futures; the simulated test draws the trajectory at the conservative point,
the pass band is expressed in standard-deviation offsets, and redesign
re-optimizes against the model calibrated with the observed test value.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import DegenerateTestError, InputError
from .gp import ErrorModel, ErrorTrajectory, condition_on
from .optimize import constrained_minimize
from .problems import DesignProblem

__all__ = [
    "MarginVector",
    "DesignOutcome",
    "initial_design",
    "simulate_test",
    "decide_redesign",
    "redesign",
    "run_cycle",
]

_K_MAX = 4.0
_SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class MarginVector:
    """Standard-deviation offsets governing design, test band and redesign.

    All components are stored nonnegative; the test passes when the
    standardized margin lies in [-k_lb, +k_ub].
    """

    k_ini: float
    k_lb: float
    k_ub: float
    k_re: float

    def __post_init__(self):
        for name in ("k_ini", "k_lb", "k_ub", "k_re"):
            v = getattr(self, name)
            if not (0.0 <= v <= _K_MAX):
                raise InputError(f"{name}={v} outside [0, {_K_MAX}]")

    def as_array(self) -> np.ndarray:
        return np.array([self.k_ini, self.k_lb, self.k_ub, self.k_re])

    @staticmethod
    def from_array(arr) -> "MarginVector":
        a = np.asarray(arr, dtype=float).ravel()
        if a.size != 4:
            raise InputError("margin vector needs exactly 4 components")
        return MarginVector(*a)


@dataclass
class DesignOutcome:
    """Record of one simulated future."""

    seed: int
    x_ini: np.ndarray
    test_value: float
    z_ini: float
    q: int
    redesign_kind: str  # none | safety | performance
    x_re: Optional[np.ndarray]
    x_final: np.ndarray
    f_final: float
    margin_final: float


def _mean_sd_at(model: ErrorModel, problem: DesignProblem, x, u_cons):
    joint = np.concatenate([np.ravel(np.asarray(x, dtype=float)), np.ravel(u_cons)])
    ebar, sd = model.predict_one(joint)
    gl = float(np.asarray(problem.lofi_limit_state(np.asarray(x, dtype=float), u_cons)))
    return gl + ebar, sd


def initial_design(
    model: ErrorModel,
    problem: DesignProblem,
    u_cons,
    k_ini: float,
    n_starts: int = 5,
) -> np.ndarray:
    """Deterministic optimum under a k_ini standard-deviation margin.

    Minimizes f(x, u_cons) subject to gbar_H(x, u_cons) - k_ini*sigma >= 0
    plus any problem-declared deterministic constraints, within bounds.
    """
    if k_ini < 0:
        raise InputError("k_ini must be nonnegative")
    u_cons = np.asarray(u_cons, dtype=float)

    def objective(x):
        return float(np.asarray(problem.objective(x, u_cons)))

    def margin_con(x):
        mean, sd = _mean_sd_at(model, problem, x, u_cons)
        return mean - k_ini * sd

    cons = [margin_con] + list(problem.deterministic_constraints)
    return constrained_minimize(
        objective,
        problem.design_bounds,
        cons,
        n_starts=n_starts,
        label=f"initial design (k_ini={k_ini:.3g})",
    )


def simulate_test(
    trajectory: ErrorTrajectory,
    model: ErrorModel,
    x_ini,
    u_cons,
    problem: DesignProblem,
) -> tuple[float, float]:
    """Simulated high-fidelity evaluation of the initial design.

    Returns the realized limit-state value and its standardized offset from
    the model mean.
    """
    x_ini = np.asarray(x_ini, dtype=float)
    u_cons = np.asarray(u_cons, dtype=float)
    mean, sd = _mean_sd_at(model, problem, x_ini, u_cons)
    if sd <= _SIGMA_FLOOR:
        raise DegenerateTestError(
            f"predictive sd {sd:.3e} at the test point; model already certain"
        )
    joint = np.concatenate([x_ini, u_cons])
    gl = float(np.asarray(problem.lofi_limit_state(x_ini, u_cons)))
    test_value = gl + trajectory(joint)
    z_ini = (test_value - mean) / sd
    return test_value, z_ini


def decide_redesign(z_ini: float, k: MarginVector) -> tuple[int, str]:
    """Pass/fail decision: q=0 iff z_ini in [-k_lb, k_ub]."""
    if z_ini < -k.k_lb:
        return 1, "safety"
    if z_ini > k.k_ub:
        return 1, "performance"
    return 0, "none"


def redesign(
    model: ErrorModel,
    trajectory: ErrorTrajectory,
    x_ini,
    u_cons,
    k_re: float,
    problem: DesignProblem,
    n_starts: int = 2,
) -> tuple[np.ndarray, ErrorModel]:
    """Calibrate on the observed test value, then re-optimize the design."""
    x_ini = np.asarray(x_ini, dtype=float)
    u_cons = np.asarray(u_cons, dtype=float)
    joint = np.concatenate([x_ini, u_cons])
    observed = trajectory(joint)  # cached test draw
    calibrated = condition_on(model, joint, observed)

    def objective(x):
        return float(np.asarray(problem.objective(x, u_cons)))

    def margin_con(x):
        mean, sd = _mean_sd_at(calibrated, problem, x, u_cons)
        return mean - k_re * sd

    cons = [margin_con] + list(problem.deterministic_constraints)
    x_re = constrained_minimize(
        objective,
        problem.design_bounds,
        cons,
        x0=x_ini,
        n_starts=n_starts,
        label=f"redesign (k_re={k_re:.3g})",
    )
    return x_re, calibrated


def run_cycle(
    model: ErrorModel,
    trajectory: ErrorTrajectory,
    problem: DesignProblem,
    u_cons,
    k: MarginVector,
    x_ini=None,
    seed: int = 0,
) -> DesignOutcome:
    """Full cycle for one future: design, test, decide, calibrate, redesign.

    `x_ini` does not depend on the trajectory; pass it in when running many
    futures for the same margin vector to avoid re-solving it.
    """
    u_cons = np.asarray(u_cons, dtype=float)
    if x_ini is None:
        x_ini = initial_design(model, problem, u_cons, k.k_ini)
    x_ini = np.asarray(x_ini, dtype=float)

    try:
        test_value, z_ini = simulate_test(trajectory, model, x_ini, u_cons, problem)
        q, kind = decide_redesign(z_ini, k)
        if q:
            x_re, _ = redesign(model, trajectory, x_ini, u_cons, k.k_re, problem)
            x_final = x_re
            joint_re = np.concatenate([x_re, u_cons])
            gl_re = float(np.asarray(problem.lofi_limit_state(x_re, u_cons)))
            margin_final = gl_re + trajectory(joint_re)
        else:
            x_re = None
            x_final = x_ini
            margin_final = test_value
    except Exception as exc:
        exc.args = (f"future seed={seed}: {exc.args[0] if exc.args else exc}",)
        raise

    f_final = float(np.asarray(problem.objective(x_final, u_cons)))
    return DesignOutcome(
        seed=seed,
        x_ini=x_ini,
        test_value=test_value,
        z_ini=z_ini,
        q=q,
        redesign_kind=kind,
        x_re=x_re,
        x_final=x_final,
        f_final=f_final,
        margin_final=margin_final,
    )
