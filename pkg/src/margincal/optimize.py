"""Multi-start constrained local minimization used by the design loops."""

import numpy as np
from scipy import optimize as sopt

from . import InfeasibleError

__all__ = ["constrained_minimize"]

_FEAS_TOL = 1e-6


def _start_points(bounds, n_starts: int, x0=None) -> list[np.ndarray]:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = []
    if x0 is not None:
        starts.append(np.clip(np.asarray(x0, dtype=float), lo, hi))
    starts.append(0.5 * (lo + hi))
    # deterministic stratified interior points
    rng = np.random.default_rng(12345)
    d = len(bounds)
    extra = max(0, n_starts - len(starts))
    for i in range(extra):
        frac = (i + rng.random(d)) / max(extra, 1)
        starts.append(lo + (hi - lo) * (0.1 + 0.8 * frac))
    return starts


def constrained_minimize(
    fun,
    bounds,
    constraints,
    x0=None,
    n_starts: int = 5,
    ftol: float = 1e-10,
    label: str = "design optimization",
) -> np.ndarray:
    """Minimize `fun(x)` subject to c(x) >= 0 for every c in `constraints`.

    SLSQP from several deterministic starts; returns the best feasible
    optimum (constraint slack >= -1e-6 * scale).

    Raises
    ------
    InfeasibleError
        No start produced a feasible point; the message reports the smallest
        constraint violation encountered.
    """
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    scipy_cons = [{"type": "ineq", "fun": c} for c in constraints]

    best_x, best_f = None, np.inf
    worst_violation = np.inf
    for s in _start_points(bounds, n_starts, x0=x0):
        res = sopt.minimize(
            fun,
            s,
            method="SLSQP",
            bounds=bounds,
            constraints=scipy_cons,
            options={"ftol": ftol, "maxiter": 200},
        )
        x = np.clip(res.x, lo, hi)
        slack = min((float(c(x)) for c in constraints), default=0.0)
        scale = max(1.0, abs(float(fun(x))))
        if slack >= -_FEAS_TOL * scale:
            f = float(fun(x))
            if f < best_f:
                best_x, best_f = x, f
        else:
            worst_violation = min(worst_violation, -slack)
    if best_x is None:
        raise InfeasibleError(
            f"{label}: no feasible point found from {n_starts} starts "
            f"(smallest constraint violation {worst_violation:.3e}); "
            f"bounds {list(map(tuple, bounds))}"
        )
    return best_x
