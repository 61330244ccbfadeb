"""Gaussian-kernel conditional mean estimator.

The predictor is the kernel ridge form k(x, X) (K + N lambda I)^{-1} X_plus
fitted per output coordinate against a shared Gram factorization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .data import Dataset

__all__ = [
    "KernelParams",
    "FittedEstimator",
    "SingularSystemError",
    "kernel_eval",
    "gram_matrix",
    "cross_gram",
    "fit",
    "r2_score",
    "log_marginal_likelihood",
]

_RESIDUAL_TOL = 1e-8


class SingularSystemError(RuntimeError):
    """Gram system cannot be factorized even after the jitter fallback."""


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Gaussian kernel hyperparameters: output scale, lengthscales, ridge."""

    sigma_f: float
    sigma_l: np.ndarray
    lam: float

    def __init__(self, sigma_f: float, sigma_l: Union[float, Sequence[float]], lam: float = 1e-5):
        sf = float(sigma_f)
        sl = np.atleast_1d(np.asarray(sigma_l, dtype=float))
        if sf <= 0 or np.any(sl <= 0):
            raise ValueError("sigma_f and sigma_l must be strictly positive")
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        object.__setattr__(self, "sigma_f", sf)
        object.__setattr__(self, "sigma_l", sl)
        object.__setattr__(self, "lam", float(lam))

    def lengthscales(self, n_dims: int) -> np.ndarray:
        if self.sigma_l.size == n_dims:
            return self.sigma_l
        if self.sigma_l.size == 1:
            return np.full(n_dims, self.sigma_l[0])
        raise ValueError(f"sigma_l has {self.sigma_l.size} entries for {n_dims} dimensions")


def _scaled(params: KernelParams, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return pts / params.lengthscales(pts.shape[1])


def kernel_eval(params: KernelParams, x: Sequence[float], xq: Sequence[float]) -> float:
    """k(x, x') = sigma_f^2 exp(-1/2 (x-x')^T diag(sigma_l)^-2 (x-x'))."""
    a = _scaled(params, x)
    b = _scaled(params, xq)
    if a.shape != b.shape:
        raise ValueError("kernel arguments must share dimension")
    d2 = float(np.sum((a - b) ** 2))
    return params.sigma_f**2 * float(np.exp(-0.5 * d2))


def gram_matrix(params: KernelParams, x: np.ndarray) -> np.ndarray:
    s = _scaled(params, x)
    d2 = cdist(s, s, "sqeuclidean")
    return params.sigma_f**2 * np.exp(-0.5 * d2)


def cross_gram(params: KernelParams, query: np.ndarray, train: np.ndarray) -> np.ndarray:
    """Kernel matrix k(query_i, train_j), shape (B, N)."""
    d2 = cdist(_scaled(params, query), _scaled(params, train), "sqeuclidean")
    return params.sigma_f**2 * np.exp(-0.5 * d2)


def _factorize(system: np.ndarray):
    """Cholesky with a single trace-scaled jitter retry.

    Returns the factor together with the matrix actually factorized.
    """
    try:
        return cho_factor(system, lower=True), system
    except np.linalg.LinAlgError:
        pass
    jittered = system + 1e-12 * np.trace(system) * np.eye(system.shape[0])
    try:
        return cho_factor(jittered, lower=True), jittered
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"Gram system is singular: {exc}") from None


@dataclass(frozen=True, eq=False)
class FittedEstimator:
    params: KernelParams
    x: np.ndarray
    xp: np.ndarray
    weights: np.ndarray  # (K + N lambda I)^{-1} X_plus
    factor: tuple  # Cholesky handle of (K + N lambda I)

    @property
    def n_dims(self) -> int:
        return self.x.shape[1]

    def predict(self, query: np.ndarray) -> np.ndarray:
        """Estimated E[X_plus | x] for one point (n,) or a batch (B, n)."""
        q = np.asarray(query, dtype=float)
        single = q.ndim == 1
        kvec = cross_gram(self.params, np.atleast_2d(q), self.x)
        out = kvec @ self.weights
        return out[0] if single else out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """(K + N lambda I)^{-1} rhs using the stored factorization."""
        return cho_solve(self.factor, rhs)


def fit(params: KernelParams, data: Dataset) -> FittedEstimator:
    n = data.n_samples
    gram = gram_matrix(params, data.x)
    factor, system = _factorize(gram + n * params.lam * np.eye(n))
    weights = cho_solve(factor, data.xp)
    residual = np.linalg.norm(system @ weights - data.xp)
    if residual > _RESIDUAL_TOL * max(np.linalg.norm(data.xp), 1e-30):
        raise SingularSystemError(
            f"solve residual {residual:.3e} exceeds tolerance; system too ill-conditioned"
        )
    return FittedEstimator(params=params, x=data.x, xp=data.xp, weights=weights, factor=factor)


def r2_score(est: FittedEstimator, holdout: Dataset) -> float:
    """Coefficient of determination averaged over output dimensions."""
    pred = est.predict(holdout.x)
    resid = np.sum((holdout.xp - pred) ** 2, axis=0)
    total = np.sum((holdout.xp - holdout.xp.mean(axis=0)) ** 2, axis=0)
    if np.any(total <= 0):
        raise ValueError("holdout targets have zero variance in some dimension")
    return float(np.mean(1.0 - resid / total))


def log_marginal_likelihood(params: KernelParams, data: Dataset) -> float:
    """Gaussian-process data log-likelihood, summed over output dimensions."""
    n = data.n_samples
    system = gram_matrix(params, data.x) + n * params.lam * np.eye(n)
    try:
        factor = cho_factor(system, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"system not positive definite: {exc}") from None
    alpha = cho_solve(factor, data.xp)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    quad = np.einsum("ij,ij->j", data.xp, alpha)
    per_dim = -0.5 * quad - 0.5 * logdet - 0.5 * n * np.log(2.0 * np.pi)
    return float(np.sum(per_dim))
