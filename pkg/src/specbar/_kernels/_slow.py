"""Numpy fallback implementations of the hot kernels.

Semantics are the contract; the compiled extension must match these to
floating-point tolerance.
"""

from __future__ import annotations

import numpy as np

# below this, sin^2(z/2) is treated as a removable singularity
_SING_TOL = 1e-18


def vp_lattice_sum(x: np.ndarray, pts: np.ndarray, a: float, b: float) -> np.ndarray:
    """Sum of the degree-(a,b) Vallee-Poussin kernel over lattice points.

    x: (P, n) query points, pts: (L, n) lattice points, both in torus
    coordinates (the kernel argument is 2*pi times the difference).
    Returns (P,) with out[p] = sum_l D^n_{a,b}(2*pi*(x[p] - pts[l])).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = x.shape[1]
    norm = (b - a) ** n
    limit = b * b - a * a
    out = np.empty(x.shape[0])
    for p in range(x.shape[0]):
        z = 2.0 * np.pi * (x[p] - pts)
        half = np.sin(0.5 * z)
        s2 = half * half
        num = np.sin(0.5 * (b + a) * z) * np.sin(0.5 * (b - a) * z)
        ratio = np.where(s2 > _SING_TOL, num / np.maximum(s2, _SING_TOL), limit)
        out[p] = np.sum(np.prod(ratio, axis=1))
    return out / norm


def trig_features(u: np.ndarray, omega: np.ndarray, weights: np.ndarray, constant: float) -> np.ndarray:
    """Feature rows [constant, w_j cos(omega_j.u), w_j sin(omega_j.u)].

    u: (B, n) torus points, omega: (M, n), weights: (M,) already scaled by
    the output variance; constant is the first entry.  Returns (B, 2M+1).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    angles = u @ omega.T
    out = np.empty((u.shape[0], 2 * omega.shape[0] + 1))
    out[:, 0] = constant
    out[:, 1::2] = weights * np.cos(angles)
    out[:, 2::2] = weights * np.sin(angles)
    return out
