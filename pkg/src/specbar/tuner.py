"""Hyperparameter selection: median heuristic, CV grid search, L-BFGS-B.

All tuners are deterministic for a fixed dataset.  The gradient-based
tuner works in log-parameter space with central finite differences and
only moves the kernel lengthscales; output scale and ridge stay at their
initial values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import pdist

from .data import Dataset
from .estimator import KernelParams, SingularSystemError, fit, log_marginal_likelihood, r2_score

__all__ = [
    "TunerReport",
    "median_heuristic",
    "grid_search",
    "lbfgs_tune",
    "maximize_log_space",
]

log = logging.getLogger(__name__)

_FD_STEP = 1e-5  # central-difference step in log space


@dataclass(frozen=True, eq=False)
class TunerReport:
    params: KernelParams
    objective: float
    evaluations: int
    method: str


def median_heuristic(data: Dataset) -> KernelParams:
    """Isotropic lengthscale from the median pairwise distance, sigma_f = 1."""
    if data.n_samples < 2:
        raise ValueError("median heuristic needs at least two samples")
    distances = pdist(data.x, "euclidean")
    sigma_l = float(np.median(distances))
    if sigma_l <= 0:
        raise ValueError("median pairwise distance is zero (duplicate inputs only)")
    return KernelParams(sigma_f=1.0, sigma_l=np.full(data.n_dims, sigma_l))


def _fold_slices(n: int, folds: int) -> list[np.ndarray]:
    # contiguous index blocks keep the split deterministic
    return [idx for idx in np.array_split(np.arange(n), folds) if idx.size > 0]


def cross_validated_r2(params: KernelParams, data: Dataset, folds: int) -> float:
    scores = []
    for test_idx in _fold_slices(data.n_samples, folds):
        mask = np.ones(data.n_samples, dtype=bool)
        mask[test_idx] = False
        if not mask.any():
            continue
        train = Dataset(data.x[mask], data.xp[mask])
        test = Dataset(data.x[test_idx], data.xp[test_idx])
        scores.append(r2_score(fit(params, train), test))
    return float(np.mean(scores))


def grid_search(data: Dataset, grid: Sequence[KernelParams], folds: int = 5) -> TunerReport:
    """Exhaustive cross-validated R^2 maximization over a parameter grid."""
    if not grid:
        raise ValueError("grid must be non-empty")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    best_idx, best_score = 0, -np.inf
    evaluations = 0
    for i, params in enumerate(grid):
        evaluations += 1
        try:
            score = cross_validated_r2(params, data, folds)
        except (SingularSystemError, ValueError):
            score = -np.inf
        if score > best_score:
            best_idx, best_score = i, score
    return TunerReport(
        params=grid[best_idx], objective=best_score, evaluations=evaluations, method="grid"
    )


def maximize_log_space(
    fn: Callable[[np.ndarray], float],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
) -> tuple[np.ndarray, float, int]:
    """Box-constrained maximization of fn over positive parameters.

    Works on log(x) internally; gradients are central finite differences.
    Returns (argmax, value, evaluation count).
    """
    x0 = np.asarray(x0, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x0.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x0.shape)
    if np.any(lower <= 0) or np.any(upper < lower):
        raise ValueError("bounds must satisfy 0 < lower <= upper")
    if np.any(x0 < lower) or np.any(x0 > upper):
        raise ValueError("initial point must lie within bounds")

    counter = {"n": 0}

    def negated(z: np.ndarray) -> float:
        counter["n"] += 1
        return -fn(np.exp(z))

    def gradient(z: np.ndarray) -> np.ndarray:
        g = np.empty_like(z)
        for j in range(z.size):
            zp, zm = z.copy(), z.copy()
            zp[j] += _FD_STEP
            zm[j] -= _FD_STEP
            g[j] = (negated(zp) - negated(zm)) / (2.0 * _FD_STEP)
        return g

    result = minimize(
        negated,
        np.log(x0),
        jac=gradient,
        method="L-BFGS-B",
        bounds=list(zip(np.log(lower), np.log(upper))),
        options={"maxcor": 10, "maxiter": 200, "gtol": 1e-6},
    )
    best = np.exp(np.clip(result.x, np.log(lower), np.log(upper)))
    return best, float(-result.fun), counter["n"]


def lbfgs_tune(
    data: Dataset,
    lower: Sequence[float],
    upper: Sequence[float],
    init: KernelParams,
) -> TunerReport:
    """Maximize the log marginal likelihood over the lengthscales."""
    sigma_l0 = init.lengthscales(data.n_dims)

    def objective(sigma_l: np.ndarray) -> float:
        params = KernelParams(init.sigma_f, sigma_l, init.lam)
        return log_marginal_likelihood(params, data)

    initial = objective(sigma_l0)  # non-PD system raises here
    best, value, evaluations = maximize_log_space(objective, sigma_l0, lower, upper)
    if value < initial:
        log.debug("lbfgs tuner did not improve; keeping initial parameters")
        best, value = sigma_l0, initial
    chosen = KernelParams(init.sigma_f, best, init.lam)
    return TunerReport(
        params=chosen,
        objective=objective(chosen.sigma_l),
        evaluations=evaluations + 1,
        method="lbfgs",
    )
