"""Covariance matrix adaptation evolution strategy with box resampling.

Minimal (mu/mu_w, lambda) implementation following the standard strategy
parameter settings. Candidates outside the box are resampled (up to a cap,
then clipped), which keeps the update equations untouched by the bounds.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["CmaResult", "cma_minimize"]


@dataclass
class CmaResult:
    x: np.ndarray
    fun: float
    n_gens: int
    n_evals: int
    stop: str


def cma_minimize(
    fun,
    x0,
    sigma0: float,
    bounds,
    popsize: int = None,
    max_gens: int = 200,
    seed=0,
    tol_fun: float = 1e-9,
    tol_x: float = 1e-4,
) -> CmaResult:
    """Minimize `fun` over a box with CMA-ES.

    Parameters
    ----------
    fun : callable of one array
    x0 : start mean, clipped to the box
    sigma0 : initial global step size (raw coordinates)
    bounds : sequence of (lo, hi)
    popsize : lambda; default 4 + floor(3 ln d)
    tol_fun, tol_x : termination on best-fitness range over a window and on
        search-distribution spread.
    """
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    d = lo.size
    rng = np.random.default_rng(seed)

    lam = popsize if popsize is not None else 4 + int(3 * np.log(d))
    mu = lam // 2
    weights = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = weights.sum() ** 2 / (weights**2).sum()

    cc = (4.0 + mueff / d) / (d + 4.0 + 2.0 * mueff / d)
    cs = (mueff + 2.0) / (d + mueff + 5.0)
    c1 = 2.0 / ((d + 1.3) ** 2 + mueff)
    cmu = min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((d + 2.0) ** 2 + mueff))
    damps = 1.0 + 2.0 * max(0.0, np.sqrt((mueff - 1.0) / (d + 1.0)) - 1.0) + cs
    chi_n = np.sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d))

    xmean = np.clip(np.asarray(x0, dtype=float), lo, hi)
    sigma = float(sigma0)
    pc = np.zeros(d)
    ps = np.zeros(d)
    cov = np.eye(d)
    eig_b = np.eye(d)
    eig_d = np.ones(d)
    inv_sqrt_c = np.eye(d)
    eigeneval = 0

    best_x, best_f = xmean.copy(), float(fun(xmean))
    n_evals = 1
    hist = []
    stop = "max_gens"
    gen = 0
    for gen in range(1, max_gens + 1):
        xs = np.empty((lam, d))
        for i in range(lam):
            for _ in range(100):
                cand = xmean + sigma * (eig_b @ (eig_d * rng.standard_normal(d)))
                if np.all(cand >= lo) and np.all(cand <= hi):
                    break
            else:
                cand = np.clip(cand, lo, hi)
            xs[i] = cand
        fs = np.array([float(fun(x)) for x in xs])
        n_evals += lam

        order = np.argsort(fs)
        if fs[order[0]] < best_f:
            best_f = float(fs[order[0]])
            best_x = xs[order[0]].copy()

        xold = xmean
        xmean = weights @ xs[order[:mu]]

        y = (xmean - xold) / sigma
        ps = (1.0 - cs) * ps + np.sqrt(cs * (2.0 - cs) * mueff) * (inv_sqrt_c @ y)
        hsig = float(
            np.linalg.norm(ps) / np.sqrt(1.0 - (1.0 - cs) ** (2.0 * n_evals / lam)) / chi_n
            < 1.4 + 2.0 / (d + 1.0)
        )
        pc = (1.0 - cc) * pc + hsig * np.sqrt(cc * (2.0 - cc) * mueff) * y

        artmp = (xs[order[:mu]] - xold) / sigma
        cov = (
            (1.0 - c1 - cmu) * cov
            + c1 * (np.outer(pc, pc) + (1.0 - hsig) * cc * (2.0 - cc) * cov)
            + cmu * artmp.T @ np.diag(weights) @ artmp
        )
        sigma *= np.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1.0))

        if n_evals - eigeneval > lam / (c1 + cmu) / d / 10.0:
            eigeneval = n_evals
            cov = np.triu(cov) + np.triu(cov, 1).T
            vals, eig_b = np.linalg.eigh(cov)
            eig_d = np.sqrt(np.maximum(vals, 1e-30))
            inv_sqrt_c = eig_b @ np.diag(1.0 / eig_d) @ eig_b.T

        hist.append(fs[order[0]])
        window = 10 + int(30 * d / lam)
        if len(hist) > window and (max(hist[-window:]) - min(hist[-window:])) < tol_fun:
            stop = "tol_fun"
            break
        if np.all(sigma * np.sqrt(np.diag(cov)) < tol_x):
            stop = "tol_x"
            break
        if np.max(eig_d) > 1e7 * np.min(eig_d):
            stop = "condition"
            break

    return CmaResult(x=best_x, fun=best_f, n_gens=gen, n_evals=n_evals, stop=stop)
