"""Problem definitions: interface plus the bundled cantilever beam and 1-D toy.

The high-fidelity limit state is quarantined behind a call counter: it may be
evaluated when building the initial design of experiments or in validation
oracles, never inside the design loops. Tests assert the counter stays flat
across optimization.

All problem callables are module-level functions bound with
:func:`functools.partial` so problems pickle cleanly into worker processes.
"""

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from . import ConfigError, InputError
from .reliability import AleatoryDistribution

__all__ = [
    "DesignProblem",
    "BeamParameters",
    "beam_g_l",
    "beam_g_h",
    "beam_objective",
    "beam_problem",
    "build_beam_doe",
    "toy_problem",
    "toy_error_model",
    "problem_from_config",
]


class _CountedCallable:
    """Wraps the high-fidelity limit state with an evaluation budget counter."""

    def __init__(self, fn: Callable):
        self._fn = fn
        self.calls = 0

    def __call__(self, x, u):
        self.calls += 1
        return self._fn(x, u)


@dataclass
class DesignProblem:
    """Everything the pipeline needs to know about one design task.

    `objective`, `lofi_limit_state` and `hifi_limit_state` take (x, u) with x
    the design vector and u the aleatory vector; limit states broadcast over
    an (n, p) block of u rows. Deterministic constraints c(x) >= 0 apply to
    the design vector only.
    """

    name: str
    design_bounds: list[tuple[float, float]]
    aleatory: list[AleatoryDistribution]
    objective: Callable
    lofi_limit_state: Callable
    hifi_limit_state: _CountedCallable
    p_f_star: float
    alpha: float
    u_cons_mode: str = "rbdo_mpp"
    percentile_levels: Optional[list[float]] = None
    deterministic_constraints: list[Callable] = field(default_factory=list)
    objective_depends_on_aleatory: bool = False

    def __post_init__(self):
        for lo, hi in self.design_bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise InputError("design bounds must be finite with lower < upper")
        if not 0 < self.p_f_star < 1:
            raise InputError("p_f_star must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")
        if not isinstance(self.hifi_limit_state, _CountedCallable):
            self.hifi_limit_state = _CountedCallable(self.hifi_limit_state)

    @property
    def n_design(self) -> int:
        return len(self.design_bounds)

    @property
    def hifi_calls(self) -> int:
        return self.hifi_limit_state.calls

    def u_mean(self) -> np.ndarray:
        return np.array([d.mean for d in self.aleatory])

    def bounds_center(self) -> np.ndarray:
        return np.array([0.5 * (lo + hi) for lo, hi in self.design_bounds])


# --------------------------------------------------------------------------
# Cantilever beam under horizontal/vertical tip loads
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BeamParameters:
    """Geometry, material and uncertainty constants for the beam case."""

    length: float = 10.0
    elastic_modulus: float = 29e6
    shear_modulus: float = 11.2e6
    allowable_displacement: float = 2.25e-3
    w_bounds: tuple[float, float] = (2.5, 5.5)
    t_bounds: tuple[float, float] = (1.5, 4.5)
    fx_mean: float = 500.0
    fx_sd: float = 100.0
    fy_mean: float = 1000.0
    fy_sd: float = 100.0
    p_f_star: float = 1.349898031630095e-03  # Phi(-3)
    alpha: float = 0.05


def _split_xu(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w, t = x[..., 0], x[..., 1]
    fx, fy = u[..., 0], u[..., 1]
    if np.any(w <= 0) or np.any(t <= 0):
        raise InputError("beam dimensions must be positive")
    return w, t, fx, fy


def beam_g_l(x, u, params: BeamParameters = BeamParameters()):
    """Slender-beam tip-displacement limit state (bending only)."""
    w, t, fx, fy = _split_xu(x, u)
    p = params
    c = 4.0 * p.length**3 / (p.elastic_modulus * w * t)
    disp = c * np.sqrt((fy / t**2) ** 2 + (fx / w**2) ** 2)
    return p.allowable_displacement - disp


def beam_g_h(x, u, params: BeamParameters = BeamParameters()):
    """Short-beam limit state: per-direction bending plus shear contribution.

    The horizontal load bends against the width (w^3 in the denominator) and
    the vertical load against the thickness (t^3), matching the bending-only
    model; the shear term 3*l*F/(2*g*w*t) is what separates the fidelities.
    """
    w, t, fx, fy = _split_xu(x, u)
    p = params
    shear = 3.0 * p.length / (2.0 * p.shear_modulus * w * t)
    dx = shear * fx + 4.0 * p.length**3 * fx / (p.elastic_modulus * w**3 * t)
    dy = shear * fy + 4.0 * p.length**3 * fy / (p.elastic_modulus * w * t**3)
    return p.allowable_displacement - np.sqrt(dx**2 + dy**2)


def beam_objective(x, u=None):
    """Cross-sectional area w*t (proportional to mass)."""
    x = np.asarray(x, dtype=float)
    w, t = x[..., 0], x[..., 1]
    if np.any(w <= 0) or np.any(t <= 0):
        raise InputError("beam dimensions must be positive")
    return w * t


def beam_problem(params: BeamParameters = BeamParameters()) -> DesignProblem:
    return DesignProblem(
        name="beam",
        design_bounds=[params.w_bounds, params.t_bounds],
        aleatory=[
            AleatoryDistribution.normal(params.fx_mean, params.fx_sd),
            AleatoryDistribution.normal(params.fy_mean, params.fy_sd),
        ],
        objective=beam_objective,
        lofi_limit_state=partial(beam_g_l, params=params),
        hifi_limit_state=_CountedCallable(partial(beam_g_h, params=params)),
        p_f_star=params.p_f_star,
        alpha=params.alpha,
        u_cons_mode="rbdo_mpp",
        objective_depends_on_aleatory=False,
    )


def build_beam_doe(
    problem: DesignProblem, n_sigma: float = 3.0
) -> tuple[np.ndarray, np.ndarray]:
    """Corner design of experiments in the joint design-aleatory space.

    Design-bound corners crossed with mean +/- n_sigma load corners:
    4 designs x 4 loadings = 16 points with discrepancies g_H - g_L.
    """
    (wl, wh), (tl, th) = problem.design_bounds
    corners_x = [(wl, tl), (wl, th), (wh, tl), (wh, th)]
    dfx, dfy = problem.aleatory
    corners_u = [
        (dfx.a + sx * dfx.b, dfy.a + sy * dfy.b)
        for sx in (-n_sigma, n_sigma)
        for sy in (-n_sigma, n_sigma)
    ]
    points, disc = [], []
    for cx in corners_x:
        for cu in corners_u:
            x = np.array(cx)
            u = np.array(cu)
            points.append(np.concatenate([x, u]))
            disc.append(
                float(problem.hifi_limit_state(x, u)) - float(problem.lofi_limit_state(x, u))
            )
    return np.array(points), np.array(disc)


# --------------------------------------------------------------------------
# 1-D analytic toy: g_L(x, u) = x - u, every pipeline quantity closed form
# --------------------------------------------------------------------------


def _toy_objective(x, u=None):
    return np.asarray(x, dtype=float)[..., 0]


def _toy_g_l(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return x[..., 0] - u[..., 0]


def _toy_g_h(x, u, amplitude=0.0):
    x = np.asarray(x, dtype=float)
    return _toy_g_l(x, u) + amplitude * np.cos(x[..., 0] / 4.0)


def toy_problem(discrepancy_amplitude: float = 0.0) -> DesignProblem:
    """1-D toy with g_L = x - u, u ~ N(0,1), f = x.

    The optional discrepancy amplitude a makes g_H = g_L + a*cos(x/4) for
    DOE-building exercises; the closed-form oracle path pairs the problem
    with the synthetic model from :func:`toy_error_model` instead.
    """
    return DesignProblem(
        name="toy",
        design_bounds=[(0.0, 10.0)],
        aleatory=[AleatoryDistribution.normal(0.0, 1.0)],
        objective=_toy_objective,
        lofi_limit_state=_toy_g_l,
        hifi_limit_state=_CountedCallable(
            partial(_toy_g_h, amplitude=float(discrepancy_amplitude))
        ),
        p_f_star=1.349898031630095e-03,
        alpha=0.05,
        u_cons_mode="rbdo_mpp",
        objective_depends_on_aleatory=False,
    )


def toy_error_model(sigma0: float = 0.05, ls_x: float = 1.5, ls_u: float = 5000.0):
    """Synthetic discrepancy model for the toy pipeline oracle.

    Two zero-valued anchor points far outside the working region pin the
    conditional mean at zero there; the huge aleatory length-scale makes
    every trajectory effectively constant in u (so margin events and failure
    events coincide), while the moderate design length-scale leaves real
    predictive spread between distinct designs.
    """
    from .gp import ErrorModel

    return ErrorModel(
        points=np.array([[-400.0, 0.0], [-430.0, 0.0]]),
        values=np.zeros(2),
        lengthscales=np.array([ls_x / 40.0, ls_u / 40.0]),
        variance=1.0,
        trend=0.0,
        nugget=1e-10,
        x_lo=np.array([-440.0, -20.0]),
        x_hi=np.array([-400.0, 20.0]),
        y_mean=0.0,
        y_std=sigma0,
    )


# --------------------------------------------------------------------------
# Config-file loading
# --------------------------------------------------------------------------


def _beam_from_config(cfg: dict) -> DesignProblem:
    defaults = BeamParameters()
    kwargs = {}
    for name in (
        "length",
        "elastic_modulus",
        "shear_modulus",
        "allowable_displacement",
        "fx_mean",
        "fx_sd",
        "fy_mean",
        "fy_sd",
        "p_f_star",
        "alpha",
    ):
        kwargs[name] = float(cfg.get(name, getattr(defaults, name)))
    for name in ("w_bounds", "t_bounds"):
        raw = cfg.get(name, getattr(defaults, name))
        kwargs[name] = (float(raw[0]), float(raw[1]))
    return beam_problem(BeamParameters(**kwargs))


_BUILDERS = {
    "beam": _beam_from_config,
    "toy": lambda cfg: toy_problem(float(cfg.get("discrepancy_amplitude", 0.0))),
}


def problem_from_config(cfg: dict) -> DesignProblem:
    """Build a problem from a parsed config mapping (see configs/beam.yaml)."""
    try:
        name = cfg["problem"]
    except (KeyError, TypeError) as exc:
        raise ConfigError("config must define 'problem'") from exc
    try:
        builder = _BUILDERS[name]
    except KeyError as exc:
        raise ConfigError(f"unknown problem {name!r}; available: {sorted(_BUILDERS)}") from exc
    problem = builder(cfg)
    if "p_f_star" in cfg:
        problem.p_f_star = float(cfg["p_f_star"])
    if "alpha" in cfg:
        problem.alpha = float(cfg["alpha"])
    if "u_cons_mode" in cfg:
        mode = cfg["u_cons_mode"]
        if mode not in ("rbdo_mpp", "percentile"):
            raise ConfigError(f"u_cons_mode must be rbdo_mpp or percentile, got {mode!r}")
        problem.u_cons_mode = mode
    if "percentile_levels" in cfg:
        problem.percentile_levels = [float(v) for v in cfg["percentile_levels"]]
    return problem
