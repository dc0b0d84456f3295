"""Reliability kernel: standard-normal transforms, FORM, truncated-normal CDF.

All limit states follow the convention that failure is g < 0. Aleatory
variables are assumed independent; each marginal is mapped to standard
normal space componentwise through its CDF.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri

from . import InputError

__all__ = [
    "AleatoryDistribution",
    "FormResult",
    "to_standard_normal",
    "from_standard_normal",
    "form_pf",
    "truncated_normal_cdf",
    "mcs_pf",
]


@dataclass(frozen=True)
class AleatoryDistribution:
    """Independent scalar aleatory variable, either normal or uniform.

    Parameters
    ----------
    kind : {'normal', 'uniform'}
    a, b : float
        mean/sd for 'normal', lower/upper for 'uniform'.
    """

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("normal", "uniform"):
            raise InputError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "normal" and not self.b > 0:
            raise InputError("normal sd must be > 0")
        if self.kind == "uniform" and not self.a < self.b:
            raise InputError("uniform requires lower < upper")

    @staticmethod
    def normal(mean: float, sd: float) -> "AleatoryDistribution":
        return AleatoryDistribution("normal", float(mean), float(sd))

    @staticmethod
    def uniform(lower: float, upper: float) -> "AleatoryDistribution":
        return AleatoryDistribution("uniform", float(lower), float(upper))

    @property
    def mean(self) -> float:
        if self.kind == "normal":
            return self.a
        return 0.5 * (self.a + self.b)

    def cdf(self, u):
        if self.kind == "normal":
            return ndtr((np.asarray(u) - self.a) / self.b)
        return np.clip((np.asarray(u) - self.a) / (self.b - self.a), 0.0, 1.0)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "normal":
            return self.a + self.b * ndtri(q)
        return self.a + (self.b - self.a) * q

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "normal":
            return rng.normal(self.a, self.b, size=size)
        return rng.uniform(self.a, self.b, size=size)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}

    @staticmethod
    def from_dict(d: dict) -> "AleatoryDistribution":
        return AleatoryDistribution(d["kind"], float(d["a"]), float(d["b"]))


@dataclass
class FormResult:
    """Outcome of a FORM run.

    beta is signed: negative when the mean point already lies in the failure
    region, so pf = Phi(-beta) stays consistent in both regimes.
    """

    beta: float
    pf: float
    mpp_u: np.ndarray
    mpp_uhat: np.ndarray
    converged: bool
    iterations: int


def _check_vector(u, dists, name="u"):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (len(dists),):
        raise InputError(f"{name} has shape {u.shape}, expected ({len(dists)},)")
    if not np.all(np.isfinite(u)):
        raise InputError(f"{name} must be finite")
    return u


def to_standard_normal(u, dists: Sequence[AleatoryDistribution]) -> np.ndarray:
    """Map a physical aleatory vector to standard normal space, uhat_j = Phi^-1(F_j(u_j)).

    Normal marginals use the exact affine map so the transform neither
    saturates nor loses precision in the tails.
    """
    u = _check_vector(u, dists)
    out = np.empty_like(u)
    for j, d in enumerate(dists):
        if d.kind == "normal":
            out[j] = (u[j] - d.a) / d.b
        else:
            if not (d.a < u[j] < d.b):
                raise InputError(
                    f"component {j} = {u[j]} outside open uniform support ({d.a}, {d.b})"
                )
            out[j] = ndtri(d.cdf(u[j]))
    return out


def from_standard_normal(uhat, dists: Sequence[AleatoryDistribution]) -> np.ndarray:
    """Inverse of :func:`to_standard_normal`."""
    uhat = _check_vector(uhat, dists, name="uhat")
    out = np.empty_like(uhat)
    for j, d in enumerate(dists):
        if d.kind == "normal":
            out[j] = d.a + d.b * uhat[j]
        else:
            out[j] = d.a + (d.b - d.a) * ndtr(uhat[j])
    return out


def truncated_normal_cdf(z: float, a: float, b: float) -> float:
    """CDF of a standard normal truncated to [a, b], evaluated at z."""
    if not a < b:
        raise InputError("truncation requires a < b")
    mass = ndtr(b) - ndtr(a)
    if mass < 1e-300:
        raise InputError("degenerate truncation interval: no probability mass")
    zc = min(max(z, a), b)
    return float((ndtr(zc) - ndtr(a)) / mass)


def _fd_gradient(fun: Callable, uhat: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    grad = np.empty_like(uhat)
    for j in range(uhat.size):
        h = rel_step * max(1.0, abs(uhat[j]))
        e = np.zeros_like(uhat)
        e[j] = h
        grad[j] = (fun(uhat + e) - fun(uhat - e)) / (2.0 * h)
    return grad


def form_pf(
    limit_state: Callable,
    dists: Sequence[AleatoryDistribution],
    x,
    grad_limit_state: Optional[Callable] = None,
    tol: float = 1e-6,
    max_iter: int = 100,
    fd_rel_step: float = 1e-6,
) -> FormResult:
    """FORM probability of failure via damped HL-RF iteration.

    Parameters
    ----------
    limit_state : callable
        g(x, u) with u in physical space; failure is g < 0.
    dists : sequence of AleatoryDistribution
    x : design vector passed through to the limit state.
    grad_limit_state : callable, optional
        Alternative function g_s(x, u) used only for finite-difference
        gradients (useful when the value function is a stochastic
        realization but a smooth surrogate of it is available). Defaults
        to the limit state itself.
    tol : float
        Convergence tolerance on the standard-normal iterate; the converged
        point also satisfies |g| <= tol * scale.

    Returns
    -------
    FormResult
        converged=False carries the last iterate; the caller decides fallback.
    """
    x = np.asarray(x, dtype=float)

    def g_of_uhat(uhat):
        return float(limit_state(x, from_standard_normal(uhat, dists)))

    if grad_limit_state is None:
        g_for_grad = g_of_uhat
    else:
        def g_for_grad(uhat):
            return float(grad_limit_state(x, from_standard_normal(uhat, dists)))

    n = len(dists)
    radius_cap = 40.0  # beyond this the normal CDF underflows anyway
    uhat = np.zeros(n)
    g0 = g_of_uhat(uhat)
    sign = 1.0 if g0 >= 0 else -1.0
    scale = max(abs(g0), 1e-30)

    g_cur = g0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = _fd_gradient(g_for_grad, uhat, rel_step=fd_rel_step)
        gnorm2 = float(grad @ grad)
        if gnorm2 <= 0 or not np.isfinite(gnorm2) or not np.isfinite(g_cur):
            break
        target = (float(grad @ uhat) - g_cur) / gnorm2 * grad
        if not np.all(np.isfinite(target)):
            break
        tnorm = np.linalg.norm(target)
        if tnorm > radius_cap:
            target *= radius_cap / tnorm
        step = target - uhat
        lam = 1.0
        u_new = uhat + step
        g_new = g_of_uhat(u_new)
        # damping: halve the step while the iterate norm grows without
        # crossing the limit surface
        n_halve = 0
        while (
            np.linalg.norm(u_new) > np.linalg.norm(uhat) + tol
            and np.sign(g_new) == np.sign(g_cur)
            and abs(g_new) > abs(g_cur)
            and n_halve < 8
        ):
            lam *= 0.5
            u_new = uhat + lam * step
            g_new = g_of_uhat(u_new)
            n_halve += 1
        delta = np.linalg.norm(u_new - uhat)
        uhat, g_cur = u_new, g_new
        if delta < tol and abs(g_cur) <= tol * max(scale, 1.0e-12):
            converged = True
            break

    beta = sign * float(np.linalg.norm(uhat))
    return FormResult(
        beta=beta,
        pf=float(ndtr(-beta)),
        mpp_u=from_standard_normal(uhat, dists),
        mpp_uhat=uhat,
        converged=converged,
        iterations=it,
    )


def mcs_pf(
    limit_state: Callable,
    dists: Sequence[AleatoryDistribution],
    x,
    n_samples: int,
    seed,
) -> tuple[float, float]:
    """Crude Monte Carlo estimate of P[g(x, U) < 0] with its standard error.

    Tries one vectorized call with an (n, p) sample block first and falls
    back to a scalar loop if the limit state does not broadcast.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    u = np.column_stack([d.sample(rng, size=n_samples) for d in dists])
    try:
        vals = np.asarray(limit_state(x, u), dtype=float)
        if vals.shape != (n_samples,):
            raise ValueError
    except Exception:
        vals = np.array([limit_state(x, u[i]) for i in range(n_samples)], dtype=float)
    pf = float(np.mean(vals < 0.0))
    se = float(np.sqrt(pf * (1.0 - pf) / n_samples))
    return pf, se


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise InputError("n must be positive")
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)
