"""Lattice constraint tightening and assembly of the synthesis LP.

A trigonometric polynomial of per-dimension degree f_max is pinned down on
a Q^n torus lattice: its continuum extrema are controlled by the lattice
values through the oversampling constant C and, for conditions restricted
to a subset of the torus, through Vallee-Poussin kernel sums A over the
lattice points outside the (enlarged) subset.  The resulting tightened
bounds are affine in the decision variables, so multiplying through by the
positive denominators C - 2A + 1 yields ordinary linear rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as kernels
from .geometry import Lattice, RegionSet

__all__ = [
    "PSOConfig",
    "TighteningCoefficients",
    "RowBlock",
    "LPProblem",
    "AUX_NAMES",
    "vallee_poussin",
    "coefficient_C",
    "coefficient_A",
    "assemble_lp",
    "dense_block",
]

log = logging.getLogger(__name__)

AUX_NAMES = (
    "Bmin_X0",
    "Bmax_Xu",
    "Bmin_DX",
    "Bmax_X",
    "Bmax_cX0",
    "Bmin_cXu",
    "Bmin_cX",
    "Bmax_DcX",
)


def vallee_poussin(z, a: float, b: float) -> float:
    """Tensor-product Vallee-Poussin kernel of degrees (a, b) at z.

    Per dimension: sin((b+a)/2 z) sin((b-a)/2 z) / sin^2(z/2), normalized
    by (b-a)^n; the removable singularity at z = 0 (mod 2*pi) takes its
    limit value b^2 - a^2 per dimension.
    """
    if not b > a > 0:
        raise ValueError("kernel degrees must satisfy b > a > 0")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    half = np.sin(0.5 * z)
    s2 = half * half
    num = np.sin(0.5 * (b + a) * z) * np.sin(0.5 * (b - a) * z)
    ratio = np.where(s2 > 1e-18, num / np.maximum(s2, 1e-18), b * b - a * a)
    return float(np.prod(ratio) / (b - a) ** z.size)


def coefficient_C(f_max: int, q: int, n: int) -> float:
    """Oversampling constant (1 - 2 f_max / Q)^(-n/2)."""
    if q <= 2 * f_max:
        raise ValueError(
            f"lattice resolution {q} violates the Nyquist condition for degree {f_max} "
            f"(need Q > 2*f_max = {2 * f_max})"
        )
    return float((1.0 - 2.0 * f_max / q) ** (-0.5 * n))


@dataclass(frozen=True)
class PSOConfig:
    particles: int = 64
    iterations: int = 200
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    seed: int = 42
    refine: bool = True


def _complement_average(
    x: np.ndarray,
    lattice: Lattice,
    inside_idx: np.ndarray,
    outside_idx: np.ndarray,
    a: float,
    b: float,
) -> np.ndarray:
    """(1/N) sum of the VP kernel over the complement lattice points.

    Uses whichever side of the partition is smaller: the kernel averages
    to exactly 1 over the full lattice, so the complement sum is 1 minus
    the in-set sum.
    """
    total = lattice.size
    if outside_idx.size <= inside_idx.size:
        return kernels.vp_lattice_sum(x, lattice.points[outside_idx], a, b) / total
    inner = kernels.vp_lattice_sum(x, lattice.points[inside_idx], a, b) / total
    return 1.0 - inner


def _pso_membership(lattice: Lattice, region: RegionSet):
    transform = lattice.transform

    def member(u: np.ndarray) -> np.ndarray:
        return region.contains(transform.invert(u))

    return member


def coefficient_A(
    lattice: Lattice,
    set_tag: str,
    f_max: int,
    pso: PSOConfig,
    region: RegionSet,
) -> float:
    """Upper estimate of the supremum of the complement kernel average.

    The supremum runs over the un-enlarged region (the margin bought by
    set scaling is exactly what makes the coefficient small); the lattice
    complement is taken against the enlarged region, as recorded in the
    lattice partitions.  Seeded particle swarm search plus one local grid
    refinement around the incumbent; the result is clamped at 0.
    """
    tag_map = {
        "X0": (lattice.in_init, lattice.out_init),
        "Xu": (lattice.in_unsafe, lattice.out_unsafe),
        "X": (lattice.in_domain, lattice.out_domain),
    }
    if set_tag not in tag_map:
        raise ValueError(f"unknown set tag {set_tag!r}")
    inside_idx, outside_idx = tag_map[set_tag]
    if outside_idx.size == 0:
        return 0.0

    a = float(f_max)
    b = float(lattice.points_per_dim - f_max)
    n = lattice.dimension
    member = _pso_membership(lattice, region)

    def objective(u: np.ndarray) -> np.ndarray:
        return _complement_average(u, lattice, inside_idx, outside_idx, a, b)

    rng = np.random.default_rng(pso.seed)
    lo, hi = region.bounding_box()
    box_lo = np.clip(lattice.transform.apply(lo), 0.0, 1.0)
    box_hi = np.clip(lattice.transform.apply(hi), 0.0, 1.0)

    # rejection-sample the swarm inside the region
    pos = np.empty((pso.particles, n))
    filled = 0
    for _ in range(200):
        cand = rng.uniform(box_lo, box_hi, size=(pso.particles, n))
        ok = member(cand)
        take = min(int(ok.sum()), pso.particles - filled)
        if take > 0:
            pos[filled : filled + take] = cand[ok][:take]
            filled += take
        if filled == pso.particles:
            break
    if filled == 0:
        raise ValueError(f"could not sample any point inside the {set_tag} set")
    if filled < pso.particles:
        reps = np.resize(np.arange(filled), pso.particles - filled)
        pos[filled:] = pos[reps]

    vel = np.zeros_like(pos)
    fitness = objective(pos)
    pbest_pos = pos.copy()
    pbest_val = fitness.copy()
    g = int(np.argmax(pbest_val))
    gbest_pos = pbest_pos[g].copy()
    gbest_val = float(pbest_val[g])

    for _ in range(pso.iterations):
        r1 = rng.uniform(size=pos.shape)
        r2 = rng.uniform(size=pos.shape)
        vel = (
            pso.inertia * vel
            + pso.cognitive * r1 * (pbest_pos - pos)
            + pso.social * r2 * (gbest_pos - pos)
        )
        pos = np.clip(pos + vel, box_lo, box_hi)
        valid = member(pos)
        if not valid.any():
            continue
        vals = np.full(pso.particles, -np.inf)
        vals[valid] = objective(pos[valid])
        improved = vals > pbest_val
        pbest_pos[improved] = pos[improved]
        pbest_val[improved] = vals[improved]
        g = int(np.argmax(pbest_val))
        if pbest_val[g] > gbest_val:
            gbest_val = float(pbest_val[g])
            gbest_pos = pbest_pos[g].copy()

    if pso.refine:
        # dense sweep over the 3^n lattice cells around the incumbent
        h = 1.0 / lattice.points_per_dim
        axes = [np.linspace(gbest_pos[d] - 1.5 * h, gbest_pos[d] + 1.5 * h, 31) for d in range(n)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        grid = np.clip(grid, box_lo, box_hi)
        valid = member(grid)
        if valid.any():
            vals = objective(grid[valid])
            top = float(np.max(vals))
            if top > gbest_val:
                gbest_val = top

    return max(gbest_val, 0.0)


@dataclass(frozen=True)
class TighteningCoefficients:
    c_bound: float
    a_domain: float
    a_init: float
    a_unsafe: float
    f_max: int
    points_per_dim: int

    def denominator(self, a_value: float) -> float:
        return self.c_bound - 2.0 * a_value + 1.0


@dataclass(frozen=True, eq=False)
class RowBlock:
    """Rows sharing a dense coefficient slab plus fixed sparse columns.

    Row i reads: scale * dense[i] . x[col_start : col_start + width]
                 + sum_k extra_coef[k] * x[extra_idx[k]]  <=  rhs[i]
    """

    name: str
    dense: np.ndarray
    col_start: int
    extra_idx: np.ndarray
    extra_coef: np.ndarray
    rhs: np.ndarray
    scale: float = 1.0

    @property
    def n_rows(self) -> int:
        return self.dense.shape[0]

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Row activations minus rhs (positive = violated)."""
        width = self.dense.shape[1]
        vals = self.scale * (self.dense @ x[self.col_start : self.col_start + width])
        if self.extra_idx.size:
            vals += self.extra_coef @ x[self.extra_idx]
        return vals - self.rhs

    def row(self, i: int, n_vars: int) -> tuple[np.ndarray, float]:
        """Materialize one row as a dense coefficient vector and rhs."""
        coeffs = np.zeros(n_vars)
        width = self.dense.shape[1]
        coeffs[self.col_start : self.col_start + width] = self.scale * self.dense[i]
        if self.extra_idx.size:
            coeffs[self.extra_idx] += self.extra_coef
        return coeffs, float(self.rhs[i])


@dataclass(eq=False)
class LPProblem:
    """min objective . x  subject to  block rows <= rhs and variable bounds."""

    blocks: list
    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    var_names: list
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return sum(b.n_rows for b in self.blocks)

    def max_residual(self, x: np.ndarray) -> float:
        worst = 0.0
        for block in self.blocks:
            if block.n_rows:
                worst = max(worst, float(np.max(block.residuals(x))))
        return worst


def dense_block(name: str, a_ub: np.ndarray, b_ub: np.ndarray) -> RowBlock:
    """Wrap a plain dense inequality system A x <= b as one block."""
    a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
    return RowBlock(
        name=name,
        dense=a_ub,
        col_start=0,
        extra_idx=np.empty(0, dtype=int),
        extra_coef=np.empty(0),
        rhs=np.atleast_1d(np.asarray(b_ub, dtype=float)),
    )


def _no_extra() -> tuple[np.ndarray, np.ndarray]:
    return np.empty(0, dtype=int), np.empty(0)


def assemble_lp(
    feat_init: np.ndarray,
    feat_unsafe: np.ndarray,
    feat_domain: np.ndarray,
    feat_complements: dict,
    h_matrix: np.ndarray,
    coeffs: TighteningCoefficients,
    horizon: int,
    epsilon: float = 0.0,
    b_bar: Optional[float] = None,
    kappa: Optional[float] = None,
) -> LPProblem:
    """Build the tightened synthesis LP.

    Variables: barrier coefficients b (2M+1), eta, c, then eight auxiliary
    lattice-extremum bounds; with epsilon > 0, |b| helper variables t and
    the l1 budget row are appended.
    """
    n_feat = feat_domain.shape[1]
    c_b = coeffs.c_bound
    d_init = coeffs.denominator(coeffs.a_init)
    d_unsafe = coeffs.denominator(coeffs.a_unsafe)
    d_domain = coeffs.denominator(coeffs.a_domain)
    for name, d in (("initial", d_init), ("unsafe", d_unsafe), ("state", d_domain)):
        if d <= 0:
            raise ValueError(
                f"tightening denominator for the {name} set is {d:.4g} <= 0: "
                f"lattice too coarse for this degree; increase lattice_resolution "
                f"or reduce num_frequencies"
            )
    if epsilon > 0 and (b_bar is None or kappa is None):
        raise ValueError("epsilon > 0 requires b_bar and kappa")

    n_vars = n_feat + 2 + 8
    names = [f"b{j}" for j in range(n_feat)] + ["eta", "c"] + list(AUX_NAMES)
    i_eta, i_c = n_feat, n_feat + 1
    aux = {name: n_feat + 2 + k for k, name in enumerate(AUX_NAMES)}
    if epsilon > 0:
        t0 = n_vars
        names += [f"t{j}" for j in range(n_feat)]
        n_vars += n_feat

    comp_init = feat_complements.get("X0", np.empty((0, n_feat)))
    comp_unsafe = feat_complements.get("Xu", np.empty((0, n_feat)))
    comp_domain = feat_complements.get("X", np.empty((0, n_feat)))

    shift = h_matrix - np.eye(n_feat)
    drift_domain = feat_domain @ shift
    drift_comp = comp_domain @ shift if comp_domain.shape[0] else np.empty((0, n_feat))

    def rows(count: int, value: float = 0.0) -> np.ndarray:
        return np.full(count, value)

    blocks: list[RowBlock] = []

    def add(name, dense, extra, rhs, scale=1.0, negate=False):
        if dense.shape[0] == 0:
            return
        idx, coef = zip(*extra) if extra else ((), ())
        blocks.append(
            RowBlock(
                name=name,
                dense=dense,
                col_start=0,
                extra_idx=np.asarray(idx, dtype=int),
                extra_coef=np.asarray(coef, dtype=float),
                rhs=rhs,
                scale=-scale if negate else scale,
            )
        )

    # initial set: Bmin_X0 <= phi b <= eta_hat
    add("init_lower", feat_init, [(aux["Bmin_X0"], 1.0)], rows(feat_init.shape[0]), negate=True)
    add(
        "init_upper",
        feat_init,
        [
            (i_eta, -2.0),
            (aux["Bmin_X0"], -(c_b - 1.0)),
            (aux["Bmax_cX0"], 2.0 * coeffs.a_init),
        ],
        rows(feat_init.shape[0]),
        scale=d_init,
    )
    # unsafe set: gamma_hat <= phi b <= Bmax_Xu
    add("unsafe_upper", feat_unsafe, [(aux["Bmax_Xu"], -1.0)], rows(feat_unsafe.shape[0]))
    add(
        "unsafe_lower",
        feat_unsafe,
        [
            (aux["Bmax_Xu"], c_b - 1.0),
            (aux["Bmin_cXu"], -2.0 * coeffs.a_unsafe),
        ],
        rows(feat_unsafe.shape[0], -2.0),
        scale=d_unsafe,
        negate=True,
    )
    # drift on the state set: Bmin_DX <= phi (H - I) b <= delta_hat
    add("drift_lower", drift_domain, [(aux["Bmin_DX"], 1.0)], rows(drift_domain.shape[0]), negate=True)
    eps_term = -2.0 * epsilon * (b_bar or 0.0) * (kappa or 0.0)
    add(
        "drift_upper",
        drift_domain,
        [
            (i_c, -2.0),
            (aux["Bmin_DX"], -(c_b - 1.0)),
            (aux["Bmax_DcX"], 2.0 * coeffs.a_domain),
        ],
        rows(drift_domain.shape[0], eps_term),
        scale=d_domain,
    )
    # nonnegativity on the state set: xi_hat <= phi b <= Bmax_X
    add("domain_upper", feat_domain, [(aux["Bmax_X"], -1.0)], rows(feat_domain.shape[0]))
    add(
        "domain_lower",
        feat_domain,
        [
            (aux["Bmax_X"], c_b - 1.0),
            (aux["Bmin_cX"], -2.0 * coeffs.a_domain),
        ],
        rows(feat_domain.shape[0]),
        scale=d_domain,
        negate=True,
    )
    # complements feed the auxiliary extremum bounds
    add("comp_init", comp_init, [(aux["Bmax_cX0"], -1.0)], rows(comp_init.shape[0]))
    add("comp_unsafe", comp_unsafe, [(aux["Bmin_cXu"], 1.0)], rows(comp_unsafe.shape[0]), negate=True)
    add("comp_domain", comp_domain, [(aux["Bmin_cX"], 1.0)], rows(comp_domain.shape[0]), negate=True)
    add("comp_drift", drift_comp, [(aux["Bmax_DcX"], -1.0)], rows(drift_comp.shape[0]))

    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    lower[i_eta], upper[i_eta] = 0.0, 1.0 - 1e-9  # eta < 1 strictly
    lower[i_c] = 0.0

    if epsilon > 0:
        lower[t0 : t0 + n_feat] = 0.0
        # helper rows t_j >= |b_j|: +-b_j - t_j <= 0, spanning b and t columns
        eye = np.eye(n_feat)
        abs_rows = np.zeros((2 * n_feat, n_vars))
        abs_rows[:n_feat, :n_feat] = eye
        abs_rows[n_feat:, :n_feat] = -eye
        abs_rows[:n_feat, t0:] = -eye
        abs_rows[n_feat:, t0:] = -eye
        blocks.append(
            RowBlock(
                name="abs_split",
                dense=abs_rows,
                col_start=0,
                extra_idx=np.empty(0, dtype=int),
                extra_coef=np.empty(0),
                rhs=np.zeros(2 * n_feat),
            )
        )
        blocks.append(
            RowBlock(
                name="l1_budget",
                dense=np.ones((1, n_feat)),
                col_start=t0,
                extra_idx=np.empty(0, dtype=int),
                extra_coef=np.empty(0),
                rhs=np.array([float(b_bar)]),
            )
        )

    objective = np.zeros(n_vars)
    objective[i_eta] = 1.0
    objective[i_c] = float(horizon)

    meta = {
        "n_features": n_feat,
        "horizon": int(horizon),
        "epsilon": float(epsilon),
        "counts": {
            "init": int(feat_init.shape[0]),
            "unsafe": int(feat_unsafe.shape[0]),
            "domain": int(feat_domain.shape[0]),
            "comp_init": int(comp_init.shape[0]),
            "comp_unsafe": int(comp_unsafe.shape[0]),
            "comp_domain": int(comp_domain.shape[0]),
        },
    }
    return LPProblem(
        blocks=blocks,
        objective=objective,
        lower=lower,
        upper=upper,
        var_names=names,
        meta=meta,
    )
