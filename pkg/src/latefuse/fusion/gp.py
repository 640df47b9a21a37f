"""Scalar Gaussian-process regression over time with a squared-exponential kernel."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.optimize import minimize

log = logging.getLogger(__name__)

# Jitter is added only when the plain factorization fails.
JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)
# Reciprocal 1-norm condition below which the search treats a covariance as singular.
MIN_RCOND = 1e-12
SIGNAL_VAR_BOUNDS = (1e-4, 1e4)
LENGTHSCALE_BOUNDS = (0.05, 30.0)
_LOG_BOUNDS = [
    (math.log(SIGNAL_VAR_BOUNDS[0]), math.log(SIGNAL_VAR_BOUNDS[1])),
    (math.log(LENGTHSCALE_BOUNDS[0]), math.log(LENGTHSCALE_BOUNDS[1])),
]
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
# Wide initial simplex in log-space: each start should explore its basin,
# not just polish the starting point.
_SIMPLEX_STEPS = np.array([[0.0, 0.0], [-1.5, -0.8], [1.5, -0.8]])


class GpNumericError(ArithmeticError):
    pass


def se_kernel(a: np.ndarray, b: np.ndarray, signal_var: float, lengthscale: float) -> np.ndarray:
    d = np.subtract.outer(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return signal_var * np.exp(-0.5 * (d / lengthscale) ** 2)


def _cholesky(C: np.ndarray) -> tuple[np.ndarray, float]:
    eye = np.eye(len(C))
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(C + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    raise GpNumericError("Cholesky failed after jitter escalation to 1e-4")


def log_marginal_likelihood(
    theta: tuple[float, float],
    t_obs: Sequence[float],
    y_obs: Sequence[float],
    noise_vars: Sequence[float],
) -> float:
    """log p(y | t, theta) for theta = (signal_var, lengthscale), zero prior mean."""
    t = np.asarray(t_obs, dtype=float)
    y = np.asarray(y_obs, dtype=float)
    noise = np.asarray(noise_vars, dtype=float)
    if not (len(t) == len(y) == len(noise)):
        raise ValueError("t_obs, y_obs and noise_vars lengths differ")
    signal_var, lengthscale = theta
    C = se_kernel(t, t, signal_var, lengthscale) + np.diag(noise)
    L, _ = _cholesky(C)
    return _lml_from_chol(L, y)


def _lml_from_chol(L: np.ndarray, y: np.ndarray) -> float:
    w = solve_triangular(L, y, lower=True, check_finite=False)
    return float(-0.5 * w @ w - np.log(np.diag(L)).sum() - len(y) * _HALF_LOG_2PI)


@dataclass(frozen=True, eq=False)
class GpModel:
    signal_var: float
    lengthscale: float
    t_obs: np.ndarray
    y_obs: np.ndarray
    noise_vars: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray  # (K + Sigma + jitter I)^-1 y
    lml: float
    fallback: bool = False

    @classmethod
    def build(cls, signal_var, lengthscale, t_obs, y_obs, noise_vars, fallback=False) -> "GpModel":
        t = np.asarray(t_obs, dtype=float)
        y = np.asarray(y_obs, dtype=float)
        noise = np.asarray(noise_vars, dtype=float)
        if np.any(noise < 0):
            raise ValueError("noise variances must be non-negative")
        C = se_kernel(t, t, signal_var, lengthscale) + np.diag(noise)
        L, _ = _cholesky(C)
        w = solve_triangular(L, y, lower=True, check_finite=False)
        alpha = solve_triangular(L.T, w, lower=False, check_finite=False)
        return cls(signal_var, lengthscale, t, y, noise, L, alpha, _lml_from_chol(L, y), fallback)


def gp_posterior_mean(model: GpModel, t_query: Sequence[float]) -> np.ndarray:
    Ks = se_kernel(np.asarray(t_query, dtype=float), model.t_obs, model.signal_var, model.lengthscale)
    return Ks @ model.alpha


def gp_posterior_var(model: GpModel, t_query: Sequence[float]) -> np.ndarray:
    """Latent-function posterior variance at the query times."""
    tq = np.asarray(t_query, dtype=float)
    Ks = se_kernel(tq, model.t_obs, model.signal_var, model.lengthscale)
    v = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    return np.maximum(model.signal_var - (v * v).sum(axis=0), 0.0)


def _fallback_theta(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(t) > 1:
        gaps = np.abs(np.subtract.outer(t, t))[np.triu_indices(len(t), k=1)]
        gaps = gaps[gaps > 0]
        ls = float(np.median(gaps)) if len(gaps) else 1.0
        sv = float(np.var(y))
    else:
        ls, sv = 1.0, 0.0
    ls = min(max(ls, LENGTHSCALE_BOUNDS[0]), LENGTHSCALE_BOUNDS[1])
    sv = min(max(sv, SIGNAL_VAR_BOUNDS[0]), SIGNAL_VAR_BOUNDS[1])
    return sv, ls


def _starts(y: np.ndarray, n: int) -> list[np.ndarray]:
    # Log-uniform lengthscales across the admissible range so short-memory
    # and long-memory optima are both reachable.
    sv = min(max(float(np.mean(y * y)), 1e-3), 1e3)
    lo, hi = (math.log(b) for b in LENGTHSCALE_BOUNDS)
    pad = 0.1 * (hi - lo)
    return [np.array([math.log(sv), v]) for v in np.linspace(lo + pad, hi - pad, n)]


def gp_fit(
    t_obs: Sequence[float],
    y_obs: Sequence[float],
    noise_vars: Sequence[float],
    n_starts: int = 4,
    max_evals: int = 60,
) -> GpModel:
    """Fit (signal_var, lengthscale) by bounded multi-start Nelder-Mead on the LML.

    Falls back to a median-gap lengthscale and sample-variance signal when
    there is a single observation or every start fails.
    """
    t = np.asarray(t_obs, dtype=float)
    y = np.asarray(y_obs, dtype=float)
    noise = np.asarray(noise_vars, dtype=float)
    if len(t) == 0:
        raise ValueError("gp_fit needs at least one observation")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y)) and np.all(np.isfinite(noise))):
        raise ValueError("non-finite GP inputs")

    if len(t) >= 2:
        d2 = np.subtract.outer(t, t) ** 2
        diag_noise = np.diag(noise)

        const = len(t) * _HALF_LOG_2PI

        def neg_lml(p: np.ndarray) -> float:
            # Hot loop on raw LAPACK. Hyperparameters whose covariance only
            # factors with added jitter are numerically singular; on noise-free
            # data the likelihood grows without bound toward them, so the
            # search treats them as infeasible.
            sv, ls = math.exp(p[0]), math.exp(p[1])
            C = sv * np.exp(-0.5 * d2 / (ls * ls)) + diag_noise
            L, info = lapack.dpotrf(C, lower=1, clean=0)
            if info != 0:
                return 1e300
            rcond, _ = lapack.dpocon(L, np.abs(C).sum(axis=0).max(), uplo="L")
            if rcond < MIN_RCOND:
                return 1e300
            w, _ = lapack.dtrtrs(L, y, lower=1)
            return float(0.5 * w @ w + np.log(L.diagonal()).sum() + const)

        best: Optional[tuple[float, np.ndarray]] = None
        for x0 in _starts(y, n_starts):
            simplex = np.clip(x0 + _SIMPLEX_STEPS, *zip(*_LOG_BOUNDS))
            res = minimize(
                neg_lml, x0, method="Nelder-Mead", bounds=_LOG_BOUNDS,
                options={"maxfev": max_evals, "xatol": 1e-6, "fatol": 1e-10,
                         "initial_simplex": simplex},
            )
            if np.isfinite(res.fun) and res.fun < 1e299 and (best is None or res.fun < best[0]):
                best = (float(res.fun), np.clip(res.x, *zip(*_LOG_BOUNDS)))
        if best is not None:
            sv, ls = math.exp(best[1][0]), math.exp(best[1][1])
            return GpModel.build(sv, ls, t, y, noise)
        log.warning("GP hyperparameter search failed on all starts; using fallback")

    sv, ls = _fallback_theta(t, y)
    return GpModel.build(sv, ls, t, y, noise, fallback=True)
