"""Truncated Fourier features from the kernel's spectral measure.

The Gaussian kernel on torus coordinates is quantized into integer
frequency bands: band k (an integer vector) collects the spectral mass of
the hyper-rectangle of half-width pi per dimension centered at 2*pi*k,
with the outermost bands absorbing the tails so the masses sum to one.
Cosine/sine pairs over the deduplicated half-grid give a feature vector of
length 2M+1 whose weighted inner product reproduces the kernel.

The transition operator H maps barrier coefficients through the fitted
estimator in the same basis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import _kernels as kernels
from .estimator import FittedEstimator
from .geometry import Lattice, UnitTransform

__all__ = [
    "FeatureMap",
    "build_feature_map",
    "spectral_weights",
    "features",
    "features_torus",
    "features_on_lattice",
    "transition_matrix",
]

log = logging.getLogger(__name__)

_CHUNK = 32768


def _half_grid(f_max: int, n: int) -> np.ndarray:
    """Integer frequency vectors with the first nonzero entry positive.

    Lexicographic enumeration of {-F..F}^n keeping one representative per
    +-k pair; the zero vector is excluded.
    """
    axes = [np.arange(-f_max, f_max + 1)] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    keep = []
    for k in grid:
        nonzero = k[k != 0]
        if nonzero.size and nonzero[0] > 0:
            keep.append(k)
    return np.asarray(keep, dtype=int)


def _band_masses_1d(sigma_l_feat: float, f_max: int) -> np.ndarray:
    """Mass of bands q = -F..F for spectral std 1/sigma_l_feat, tails absorbed."""
    q = np.arange(-f_max, f_max + 1)
    upper = (2.0 * np.pi * q + np.pi) * sigma_l_feat
    lower = (2.0 * np.pi * q - np.pi) * sigma_l_feat
    mass = norm.cdf(upper) - norm.cdf(lower)
    mass[0] += norm.cdf(lower[0])  # left tail
    mass[-1] += 1.0 - norm.cdf(upper[-1])  # right tail
    return mass


@dataclass(frozen=True, eq=False)
class FeatureMap:
    dimension: int
    f_max: int
    freqs: np.ndarray  # (M, n) integer vectors, sign-deduplicated half grid
    omega: np.ndarray  # (M, n) = 2*pi*freqs
    masses: np.ndarray  # (M+1,): m_0 then paired masses m_j
    sigma_f: float
    sigma_l_feat: np.ndarray
    transform: UnitTransform

    @property
    def n_features(self) -> int:
        return 2 * self.freqs.shape[0] + 1

    @property
    def n_pairs(self) -> int:
        return self.freqs.shape[0]

    def weight_diagonal(self) -> np.ndarray:
        """D = diag(sigma_f^2 [m_0, m_1, m_1, m_2, m_2, ...])."""
        d = np.empty(self.n_features)
        d[0] = self.masses[0]
        d[1::2] = self.masses[1:]
        d[2::2] = self.masses[1:]
        return self.sigma_f**2 * d


def spectral_weights(sigma_l_feat: np.ndarray, f_max: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Frequency half-grid and band masses [m_0, m_1, ..., m_M].

    m_0 is the central band's mass; m_j for j >= 1 combines the +-k_j pair.
    The masses sum to 1 exactly (up to rounding) because tails are absorbed.
    """
    if f_max < 1:
        raise ValueError("need at least one frequency band beyond the constant")
    sl = np.broadcast_to(np.asarray(sigma_l_feat, dtype=float), (n,))
    per_dim = [_band_masses_1d(s, f_max) for s in sl]
    freqs = _half_grid(f_max, n)
    m0 = 1.0
    for d in range(n):
        m0 *= per_dim[d][f_max]
    paired = np.empty(freqs.shape[0])
    for j, k in enumerate(freqs):
        mass = 1.0
        for d in range(n):
            mass *= per_dim[d][k[d] + f_max]
        paired[j] = 2.0 * mass  # +-k carry equal mass by symmetry
    masses = np.concatenate(([m0], paired))
    return freqs, masses


def build_feature_map(
    transform: UnitTransform,
    num_frequencies: int,
    sigma_l_feat,
    sigma_f: float,
) -> FeatureMap:
    """Feature map with bands 0..M for M = num_frequencies (2M+1 features in 1-D)."""
    if num_frequencies < 1:
        raise ValueError("num_frequencies must be >= 1")
    n = transform.dimension
    f_max = num_frequencies
    sl = np.broadcast_to(np.asarray(sigma_l_feat, dtype=float), (n,)).copy()
    freqs, masses = spectral_weights(sl, f_max, n)
    coverage = 2.0 * np.pi * f_max * np.min(sl)
    if coverage < 3.0:
        log.info(
            "frequency grid covers %.2f standard deviations of the spectral measure "
            "(rule of thumb wants >= 3); consider raising num_frequencies",
            coverage,
        )
    return FeatureMap(
        dimension=n,
        f_max=f_max,
        freqs=freqs,
        omega=2.0 * np.pi * freqs.astype(float),
        masses=masses,
        sigma_f=float(sigma_f),
        sigma_l_feat=sl,
        transform=transform,
    )


def features_torus(fmap: FeatureMap, u: np.ndarray) -> np.ndarray:
    """Feature rows for points already in torus coordinates, shape (B, 2M+1)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    total = u.shape[0]
    out = np.empty((total, fmap.n_features))
    sf2 = fmap.sigma_f**2
    scale = sf2 * fmap.masses[1:]
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        out[start:stop] = kernels.trig_features(
            u[start:stop], fmap.omega, scale, sf2 * fmap.masses[0]
        )
    return out


def features(fmap: FeatureMap, x: np.ndarray) -> np.ndarray:
    """Feature vector(s) for state-space points."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    u = fmap.transform.apply(np.atleast_2d(x))
    if np.any(u < -1e-9) or np.any(u > 1.0 + 1e-9):
        log.warning("evaluating features outside the transformed domain [0,1]^n")
    rows = features_torus(fmap, u)
    return rows[0] if single else rows


def features_on_lattice(fmap: FeatureMap, lattice: Lattice) -> np.ndarray:
    """Feature matrix over all lattice points, shape (Q^n, 2M+1)."""
    if lattice.dimension != fmap.dimension:
        raise ValueError("lattice and feature map dimension mismatch")
    return features_torus(fmap, lattice.points)


def transition_matrix(est: FittedEstimator, fmap: FeatureMap) -> np.ndarray:
    """Finite-basis transition operator H = D^{-1} Phi_X^T (K+N lam I)^{-1} Phi_plus.

    The estimator must have been fit on torus coordinates (the same ones the
    feature map expands over); its stored training arrays are used as-is.
    """
    if est.n_dims != fmap.dimension:
        raise ValueError("estimator and feature map dimension mismatch")
    phi_x = features_torus(fmap, est.x)
    phi_plus = features_torus(fmap, est.xp)
    solved = est.solve(phi_plus)  # (N, 2M+1)
    h = phi_x.T @ solved
    h /= fmap.weight_diagonal()[:, None]
    return h
