"""Gaussian-process model of the low/high-fidelity discrepancy.

The model is an interpolating kriging surface over the joint design-aleatory
space with a squared-exponential kernel, per-dimension length-scales and a
constant trend. Inputs are normalized to [0, 1] per dimension and outputs
standardized before any kernel evaluation; all public interfaces speak raw
units.

Trajectories (conditional simulations) are lazily evaluated function objects:
every new query point is sampled from the Gaussian conditional on the
training data and all previously sampled points, then cached, so a trajectory
behaves like one fixed realization of the discrepancy function.
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.linalg import cholesky, solve_triangular

from . import FitError, InputError

__all__ = [
    "FitConfig",
    "ErrorModel",
    "ErrorTrajectory",
    "fit_error_model",
    "condition_on",
    "sample_trajectory",
    "save_model",
    "load_model",
]

_LOG10_BOUNDS = (-2.0, 2.0)  # length-scale search box in normalized input units
_NUGGET_MAX = 1e-6


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameter-estimation settings for :func:`fit_error_model`.

    mode 'mle' estimates per-dimension length-scales by multi-start profile
    maximum likelihood. mode 'fixed' keeps the given normalized length-scales
    and profiles only the trend constant and process variance; useful when a
    tiny design of experiments leaves the likelihood too flat to identify the
    length-scales, or when hyperparameters are prescribed.
    """

    kernel: str = "squared_exponential"
    trend: str = "constant"
    n_starts: int = 8
    nugget: float = 1e-10
    seed: int = 0
    mode: str = "mle"
    lengthscales: Optional[tuple] = None

    def __post_init__(self):
        if self.kernel != "squared_exponential":
            raise InputError(f"unsupported kernel {self.kernel!r}")
        if self.trend != "constant":
            raise InputError(f"unsupported trend {self.trend!r}")
        if self.mode not in ("mle", "fixed"):
            raise InputError(f"fit mode must be 'mle' or 'fixed', got {self.mode!r}")
        if self.mode == "fixed" and self.lengthscales is None:
            raise InputError("fixed mode requires lengthscales")


def _sq_dists(za: np.ndarray, zb: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Scaled squared distances sum_k ((za_ik - zb_jk)/l_k)^2, shape (na, nb)."""
    a = za / lengthscales
    b = zb / lengthscales
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return np.maximum(d2, 0.0)


def _corr(za: np.ndarray, zb: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * _sq_dists(za, zb, lengthscales))


class ErrorModel:
    """Fitted discrepancy model: immutable after construction.

    Hyperparameters live in normalized space; `points`/`values` keep the raw
    training data. Use :func:`fit_error_model` for MLE fitting or the
    constructor directly when hyperparameters are known (tests, synthetic
    studies).
    """

    def __init__(
        self,
        points: np.ndarray,
        values: np.ndarray,
        lengthscales: np.ndarray,
        variance: float,
        trend: float,
        nugget: float,
        x_lo: np.ndarray,
        x_hi: np.ndarray,
        y_mean: float,
        y_std: float,
        fit_seed: int = 0,
    ):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.values = np.asarray(values, dtype=float).ravel()
        if self.points.shape[0] != self.values.size:
            raise InputError("points/values length mismatch")
        self.lengthscales = np.asarray(lengthscales, dtype=float).ravel()
        if self.lengthscales.size != self.points.shape[1]:
            raise InputError("one length-scale per input dimension required")
        if not np.all(self.lengthscales > 0) or not variance > 0:
            raise InputError("length-scales and variance must be positive")
        self.variance = float(variance)
        self.trend = float(trend)
        self.nugget = float(nugget)
        self.x_lo = np.asarray(x_lo, dtype=float).ravel()
        self.x_hi = np.asarray(x_hi, dtype=float).ravel()
        self.y_mean = float(y_mean)
        self.y_std = float(y_std)
        self.fit_seed = int(fit_seed)

        self._z = self._normalize(self.points)
        self._yn = (self.values - self.y_mean) / self.y_std
        k = self.variance * (
            _corr(self._z, self._z, self.lengthscales)
            + self.nugget * np.eye(len(self._yn))
        )
        try:
            self._chol = cholesky(k, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FitError("training covariance not positive definite") from exc
        self._w = solve_triangular(self._chol, self._yn - self.trend, lower=True)
        self._alpha = solve_triangular(self._chol.T, self._w, lower=False)

    # -- coordinate handling ------------------------------------------------

    def _normalize(self, pts: np.ndarray) -> np.ndarray:
        width = np.where(self.x_hi > self.x_lo, self.x_hi - self.x_lo, 1.0)
        return (np.atleast_2d(pts) - self.x_lo) / width

    @property
    def n_train(self) -> int:
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _check_points(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] != self.dim:
            raise InputError(f"points have dimension {pts.shape[1]}, expected {self.dim}")
        if not np.all(np.isfinite(pts)):
            raise InputError("points must be finite")
        return pts

    # -- prediction ----------------------------------------------------------

    def predict(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Kriging conditional mean and standard deviation at `pts`.

        Returns arrays of shape (n,); scalars in, scalars out is left to the
        convenience wrappers below.
        """
        pts = self._check_points(pts)
        z = self._normalize(pts)
        kvec = self.variance * _corr(self._z, z, self.lengthscales)
        v = solve_triangular(self._chol, kvec, lower=True)
        mean_n = self.trend + v.T @ self._w
        var_n = self.variance * (1.0 + self.nugget) - np.sum(v * v, axis=0)
        sd_n = np.sqrt(np.maximum(var_n, 0.0))
        return self.y_mean + self.y_std * mean_n, self.y_std * sd_n

    def predict_one(self, pt) -> tuple[float, float]:
        m, s = self.predict(np.atleast_2d(pt))
        return float(m[0]), float(s[0])

    def joint_predictive(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Joint conditional mean vector and covariance matrix at `pts`."""
        pts = self._check_points(pts)
        z = self._normalize(pts)
        kvec = self.variance * _corr(self._z, z, self.lengthscales)
        v = solve_triangular(self._chol, kvec, lower=True)
        mean_n = self.trend + v.T @ self._w
        prior = self.variance * (
            _corr(z, z, self.lengthscales) + self.nugget * np.eye(len(z))
        )
        cov_n = prior - v.T @ v
        mean = self.y_mean + self.y_std * mean_n
        cov = (self.y_std**2) * cov_n
        return mean, cov

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "values": self.values.tolist(),
            "lengthscales": self.lengthscales.tolist(),
            "variance": self.variance,
            "trend": self.trend,
            "nugget": self.nugget,
            "x_lo": self.x_lo.tolist(),
            "x_hi": self.x_hi.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "fit_seed": self.fit_seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ErrorModel":
        return ErrorModel(
            points=np.array(d["points"], dtype=float),
            values=np.array(d["values"], dtype=float),
            lengthscales=np.array(d["lengthscales"], dtype=float),
            variance=d["variance"],
            trend=d["trend"],
            nugget=d["nugget"],
            x_lo=np.array(d["x_lo"], dtype=float),
            x_hi=np.array(d["x_hi"], dtype=float),
            y_mean=d["y_mean"],
            y_std=d["y_std"],
            fit_seed=d.get("fit_seed", 0),
        )


def _escalate_nugget(log10_ls, z, yn, nugget):
    while _neg_log_likelihood(log10_ls, z, yn, nugget) >= 1e19:
        nugget *= 10.0
        if nugget > _NUGGET_MAX:
            raise FitError("covariance singular after nugget escalation")
    return nugget


def _neg_log_likelihood(log10_ls, z, yn, nugget):
    """Profile NLL over length-scales; trend and variance are closed form."""
    ls = 10.0 ** np.asarray(log10_ls, dtype=float)
    n = len(yn)
    r = _corr(z, z, ls) + nugget * np.eye(n)
    try:
        lo = cholesky(r, lower=True)
    except np.linalg.LinAlgError:
        return 1e20
    ones = np.ones(n)
    a = solve_triangular(lo, ones, lower=True)
    b = solve_triangular(lo, yn, lower=True)
    denom = a @ a
    if denom <= 0:
        return 1e20
    mu = (a @ b) / denom
    resid = b - mu * a
    s2 = (resid @ resid) / n
    if not np.isfinite(s2) or s2 <= 0:
        return 1e20
    return float(0.5 * (n * np.log(s2) + 2.0 * np.sum(np.log(np.diag(lo)))))


def fit_error_model(
    points,
    discrepancies,
    config: FitConfig = FitConfig(),
) -> ErrorModel:
    """Fit the discrepancy model by multi-start profile maximum likelihood.

    Raises
    ------
    InputError
        Fewer than 2 distinct points, inconsistent dimensions, or duplicate
        points carrying conflicting values.
    FitError
        Covariance stays singular after nugget escalation.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(discrepancies, dtype=float).ravel()
    if pts.ndim != 2 or pts.shape[0] != y.size:
        raise InputError("points/discrepancies shape mismatch")
    if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(y))):
        raise InputError("inputs must be finite")

    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    if len(uniq) < 2:
        raise InputError("need at least 2 distinct points")
    if len(uniq) < len(pts):
        for g in range(len(uniq)):
            vals = y[inverse == g]
            if np.ptp(vals) > 1e-12 * max(1.0, np.max(np.abs(vals))):
                raise InputError(f"duplicate point {uniq[g]} with conflicting values")
        keep = np.array([np.argmax(inverse == g) for g in range(len(uniq))])
        pts, y = pts[keep], y[keep]

    x_lo = pts.min(axis=0)
    x_hi = pts.max(axis=0)
    width = np.where(x_hi > x_lo, x_hi - x_lo, 1.0)
    z = (pts - x_lo) / width
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if y_std <= 0:
        y_std = max(abs(y_mean), 1.0)
    yn = (y - y_mean) / y_std

    d = pts.shape[1]
    nugget = config.nugget
    if config.mode == "fixed":
        ls = np.asarray(config.lengthscales, dtype=float).ravel()
        if ls.size != d:
            raise InputError(f"need {d} lengthscales, got {ls.size}")
        if _neg_log_likelihood(np.log10(ls), z, yn, nugget) >= 1e19:
            nugget = _escalate_nugget(np.log10(ls), z, yn, nugget)
    else:
        rng = np.random.default_rng(config.seed)
        lo_b, hi_b = _LOG10_BOUNDS
        # Latin-hypercube starts over the log bounds
        starts = np.empty((config.n_starts, d))
        for j in range(d):
            cells = (np.arange(config.n_starts) + rng.random(config.n_starts)) / config.n_starts
            starts[:, j] = lo_b + (hi_b - lo_b) * rng.permutation(cells)

        while True:
            best = None
            for s in starts:
                res = optimize.minimize(
                    _neg_log_likelihood,
                    s,
                    args=(z, yn, nugget),
                    method="Nelder-Mead",
                    bounds=[(lo_b, hi_b)] * d,
                    options={"xatol": 1e-4, "fatol": 1e-8, "maxiter": 400 * d},
                )
                if best is None or res.fun < best.fun:
                    best = res
            if best is not None and best.fun < 1e19:
                break
            nugget *= 10.0
            if nugget > _NUGGET_MAX:
                raise FitError("covariance singular for all starts after nugget escalation")

        ls = 10.0 ** best.x
    n = len(yn)
    while True:
        r = _corr(z, z, ls) + nugget * np.eye(n)
        try:
            lo = cholesky(r, lower=True)
            break
        except np.linalg.LinAlgError:
            nugget *= 10.0
            if nugget > _NUGGET_MAX:
                raise FitError("covariance singular after nugget escalation")
    ones = np.ones(n)
    a = solve_triangular(lo, ones, lower=True)
    b = solve_triangular(lo, yn, lower=True)
    mu = (a @ b) / (a @ a)
    resid = b - mu * a
    s2 = float((resid @ resid) / n)
    s2 = max(s2, 1e-300)

    return ErrorModel(
        points=pts,
        values=y,
        lengthscales=ls,
        variance=s2,
        trend=float(mu),
        nugget=nugget,
        x_lo=x_lo,
        x_hi=x_hi,
        y_mean=y_mean,
        y_std=y_std,
        fit_seed=config.seed,
    )


def condition_on(model: ErrorModel, point, observed: float) -> ErrorModel:
    """Return a new model with `(point, observed)` appended to the data.

    Hyperparameters, normalization constants and the trend stay frozen, so
    this is exact Gaussian conditioning; only the data set grows.
    """
    pt = np.asarray(point, dtype=float).ravel()
    if pt.size != model.dim:
        raise InputError(f"point has dimension {pt.size}, expected {model.dim}")
    if not (np.all(np.isfinite(pt)) and np.isfinite(observed)):
        raise InputError("conditioning data must be finite")
    observed = float(observed)

    match = np.all(model.points == pt, axis=1)
    if np.any(match):
        existing = model.values[match][0]
        if abs(existing - observed) > 1e-9 * max(1.0, abs(existing)):
            raise InputError(
                f"point {pt} already observed with value {existing}, conflicting {observed}"
            )
        return ErrorModel(
            points=model.points,
            values=model.values,
            lengthscales=model.lengthscales,
            variance=model.variance,
            trend=model.trend,
            nugget=model.nugget,
            x_lo=model.x_lo,
            x_hi=model.x_hi,
            y_mean=model.y_mean,
            y_std=model.y_std,
            fit_seed=model.fit_seed,
        )

    return ErrorModel(
        points=np.vstack([model.points, pt]),
        values=np.append(model.values, observed),
        lengthscales=model.lengthscales,
        variance=model.variance,
        trend=model.trend,
        nugget=model.nugget,
        x_lo=model.x_lo,
        x_hi=model.x_hi,
        y_mean=model.y_mean,
        y_std=model.y_std,
        fit_seed=model.fit_seed,
    )


class ErrorTrajectory:
    """One lazily-evaluated conditional simulation of the discrepancy.

    Stateful and single-threaded: queries grow an internal Cholesky factor by
    sequential conditioning, and every sampled value is cached so replay at a
    previously seen point returns it exactly. Exact matches with the parent's
    training points return the training values.
    """

    def __init__(self, parent: ErrorModel, seed):
        self.parent = parent
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.clamped = 0
        n0 = parent.n_train
        self._cap = max(2 * n0, 64)
        self._z = np.zeros((self._cap, parent.dim))
        self._z[:n0] = parent._z
        self._chol = np.zeros((self._cap, self._cap))
        self._chol[:n0, :n0] = parent._chol
        self._w = np.zeros(self._cap)
        self._w[:n0] = parent._w
        self._n = n0
        self._cache: dict[tuple, float] = {
            tuple(p): float(v) for p, v in zip(parent.points, parent.values)
        }

    def _grow(self):
        new_cap = 2 * self._cap
        z = np.zeros((new_cap, self.parent.dim))
        z[: self._n] = self._z[: self._n]
        ch = np.zeros((new_cap, new_cap))
        ch[: self._n, : self._n] = self._chol[: self._n, : self._n]
        w = np.zeros(new_cap)
        w[: self._n] = self._w[: self._n]
        self._z, self._chol, self._w, self._cap = z, ch, w, new_cap

    def _conditional(self, znew: np.ndarray) -> tuple[float, float, np.ndarray]:
        """Conditional mean/variance (standardized units) given data + cache."""
        p = self.parent
        n = self._n
        kvec = (p.variance * _corr(self._z[:n], znew[None, :], p.lengthscales)).ravel()
        lo = self._chol[:n, :n]
        v = solve_triangular(lo, kvec, lower=True, check_finite=False)
        mean_n = p.trend + v @ self._w[:n]
        var_n = p.variance * (1.0 + p.nugget) - v @ v
        return float(mean_n), float(var_n), v

    def posterior_mean(self, points):
        """Conditional mean (raw units) given training data and cache; no sampling.

        Accepts a single point (returns float) or an (m, d) block (returns
        an (m,) array).
        """
        p = self.parent
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        z = p._normalize(np.atleast_2d(pts))
        n = self._n
        kmat = p.variance * _corr(self._z[:n], z, p.lengthscales)
        v = solve_triangular(self._chol[:n, :n], kmat, lower=True, check_finite=False)
        mean_n = p.trend + v.T @ self._w[:n]
        out = p.y_mean + p.y_std * mean_n
        return float(out[0]) if scalar else out

    def __call__(self, point) -> float:
        pt = np.asarray(point, dtype=float).ravel()
        p = self.parent
        if pt.size != p.dim:
            raise InputError(f"point has dimension {pt.size}, expected {p.dim}")
        key = tuple(pt)
        hit = self._cache.get(key)
        if hit is not None:
            return hit

        znew = p._normalize(pt[None, :])[0]
        mean_n, var_n, v = self._conditional(znew)
        if var_n < -1e-8 * p.variance:
            self.clamped += 1
        var_n = max(var_n, 0.0)
        zdraw = self.rng.standard_normal()
        val_n = mean_n + np.sqrt(var_n) * zdraw

        # append to the factor; keep a nugget-level floor on the diagonal
        if self._n == self._cap:
            self._grow()
        n = self._n
        d = np.sqrt(max(var_n, p.nugget * p.variance))
        self._z[n] = znew
        self._chol[n, :n] = v
        self._chol[n, n] = d
        self._w[n] = (val_n - mean_n) / d
        self._n = n + 1

        val = p.y_mean + p.y_std * val_n
        self._cache[key] = float(val)
        return float(val)


def sample_trajectory(model: ErrorModel, seed) -> ErrorTrajectory:
    """Draw one possible-future realization of the discrepancy function."""
    return ErrorTrajectory(model, seed)


def save_model(model: ErrorModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ErrorModel:
    with open(path) as fh:
        return ErrorModel.from_dict(json.load(fh))
