"""LP solving: built-in row-generation simplex plus optional adapters.

The built-in backend works on the block-structured row store directly:
it solves a growing working subset of rows with a dense two-phase revised
simplex and adds violated rows until the full problem is satisfied.  Rows
are never dropped, so the objective is nondecreasing across rounds and
termination is guaranteed; a subset infeasibility certifies the full
problem infeasible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .relaxation import LPProblem, RowBlock

__all__ = ["LPSolution", "solve_lp", "export_lp", "available_backends"]

log = logging.getLogger(__name__)

_RC_TOL = 1e-9  # reduced-cost optimality tolerance
_PIVOT_TOL = 1e-11
_DEGEN_TOL = 1e-12
_VIOLATION_TOL = 1e-9
_MAX_ROUNDS = 500
_BATCH_PER_BLOCK = 48
_BATCH_TOTAL = 256
_DROP_SLACK = 1e-7  # working rows looser than this are eligible for dropping
_DROP_GRACE = 2  # rounds a fresh row is immune from dropping


@dataclass(eq=False)
class LPSolution:
    status: str  # optimal | infeasible | unbounded | iteration-limit
    x: Optional[np.ndarray]
    objective: float
    max_residual: float
    duality_gap: float = float("nan")
    iterations: int = 0
    rows_used: int = 0
    meta: dict = field(default_factory=dict)


# --- dense two-phase simplex on a working set ------------------------------


def _column_scales(problem: LPProblem) -> np.ndarray:
    """Power-of-two equilibration factor per variable.

    Feature columns inherit the kernel band masses, which span many orders of
    magnitude, so the raw constraint matrix can be hopelessly column-scaled.
    Solving in x_j = s_j * y_j with s_j ~ 1/max|column j| is exact (powers of
    two) and brings every column to unit scale.
    """
    maxabs = np.zeros(problem.n_vars)
    for block in problem.blocks:
        if block.n_rows == 0:
            continue
        width = block.dense.shape[1]
        col_max = abs(block.scale) * np.max(np.abs(block.dense), axis=0)
        sl = slice(block.col_start, block.col_start + width)
        np.maximum(maxabs[sl], col_max, out=maxabs[sl])
        if block.extra_idx.size:
            np.maximum.at(maxabs, block.extra_idx, np.abs(block.extra_coef))
    scales = np.ones(problem.n_vars)
    pos = maxabs > 0
    scales[pos] = np.exp2(np.clip(np.round(-np.log2(maxabs[pos])), -64, 64))
    return scales


class _Standardized:
    """Shift/split variables so the working problem is min c y, A y <= b, y >= 0.

    An optional equilibration vector is folded into the variable mapping:
    the simplex sees the scaled variables, callers see original units.
    """

    def __init__(self, problem: LPProblem, scales: Optional[np.ndarray] = None):
        s = np.ones(problem.n_vars) if scales is None else scales
        cols: list[tuple[int, float]] = []  # (original var, sign)
        shift = np.zeros(problem.n_vars)  # in scaled units
        ub_rows: list[tuple[int, float]] = []  # (column, bound) for two-sided vars
        for i in range(problem.n_vars):
            lo, hi = problem.lower[i] / s[i], problem.upper[i] / s[i]
            if np.isinf(lo) and np.isinf(hi):
                cols.append((i, 1.0))
                cols.append((i, -1.0))
            elif np.isinf(hi):
                shift[i] = lo
                cols.append((i, 1.0))
            elif np.isinf(lo):
                shift[i] = hi
                cols.append((i, -1.0))
            else:
                shift[i] = lo
                ub_rows.append((len(cols), hi - lo))
                cols.append((i, 1.0))
        self.problem = problem
        self.scales = s
        self.var_idx = np.array([i for i, _ in cols], dtype=int)
        self.sign = np.array([s_ for _, s_ in cols])
        self.xshift = s * shift  # in original units
        self.ub_rows = ub_rows
        self.col_factor = self.sign * s[self.var_idx]
        self.c = problem.objective[self.var_idx] * self.col_factor
        self.const = float(problem.objective @ self.xshift)

    @property
    def n_cols(self) -> int:
        return self.var_idx.size

    def rows_to_std(self, coeffs: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a_std = coeffs[:, self.var_idx] * self.col_factor
        b_std = rhs - coeffs @ self.xshift
        return a_std, b_std

    def bound_rows(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.ub_rows:
            return np.empty((0, self.n_cols)), np.empty(0)
        a = np.zeros((len(self.ub_rows), self.n_cols))
        b = np.empty(len(self.ub_rows))
        for r, (col, bound) in enumerate(self.ub_rows):
            a[r, col] = 1.0
            b[r] = bound
        return a, b

    def to_original(self, y: np.ndarray) -> np.ndarray:
        x = self.xshift.copy()
        np.add.at(x, self.var_idx, self.col_factor * y)
        return x

    def ray_to_original(self, y: np.ndarray) -> np.ndarray:
        dx = np.zeros(self.problem.n_vars)
        np.add.at(dx, self.var_idx, self.col_factor * y)
        return dx


class _Unbounded(Exception):
    def __init__(self, ray_y: np.ndarray):
        self.ray_y = ray_y


class _IterationLimit(Exception):
    pass


class _NumericalBreakdown(Exception):
    def __init__(self, reason: str = ""):
        self.reason = reason
        super().__init__(reason)


class _DualInfeasible(Exception):
    """Dual unboundedness: certifies the primal working set is infeasible."""


class _DenseSimplex:
    """Revised simplex over [A | slack-diag | artificial-identity] columns.

    Slack and artificial columns are implicit; only the structural block is
    stored densely.  Bland's rule engages after a run of degenerate pivots.
    The basis inverse is kept in product form and rebuilt from scratch on a
    fixed cadence and whenever an update looks numerically suspect; terminal
    verdicts are only accepted from a freshly factorized basis.
    """

    _REFACTOR_EVERY = 128
    _GROWTH_LIMIT = 1e11  # pivot-row magnitude that forces a refactor

    warm_note = "cold"  # diagnostic: how the last warm-start attempt ended

    def __init__(self, a: np.ndarray, b: np.ndarray, bland_after: int, safe: bool = False):
        neg = b < 0
        self.a = np.where(neg[:, None], -a, a)
        self.b = np.where(neg, -b, b)
        self.slack_sign = np.where(neg, -1.0, 1.0)
        self.m, self.n = self.a.shape
        self.bland_after = 0 if safe else bland_after
        if safe:
            self.refactor_every = 32
        else:
            self.refactor_every = self._REFACTOR_EVERY if self.m <= 1024 else 384
        self.iterations = 0

    def column(self, j: int) -> np.ndarray:
        if j < self.n:
            return self.a[:, j]
        col = np.zeros(self.m)
        r = j - self.n
        if r < self.m:
            col[r] = self.slack_sign[r]
        else:
            col[r - self.m] = 1.0
        return col

    def _reduced_costs(self, cost: np.ndarray, lam: np.ndarray, include_artificial: bool) -> np.ndarray:
        n_total = self.n + self.m + (self.m if include_artificial else 0)
        rc = np.empty(n_total)
        rc[: self.n] = cost[: self.n] - lam @ self.a
        rc[self.n : self.n + self.m] = cost[self.n : self.n + self.m] - lam * self.slack_sign
        if include_artificial:
            rc[self.n + self.m :] = cost[self.n + self.m :] - lam
        return rc

    def _refactor(self, basis: np.ndarray, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
        cols = np.column_stack([self.column(j) for j in basis])
        try:
            b_inv = np.linalg.inv(cols)
        except np.linalg.LinAlgError:
            b_inv = np.linalg.pinv(cols)
        x_b = b_inv @ self.b
        if clamp:
            x_b = np.maximum(x_b, 0.0)
        return b_inv, x_b

    def run(self, cost: np.ndarray, basis: np.ndarray, b_inv: np.ndarray, x_b: np.ndarray,
            include_artificial: bool, forbidden: Optional[set] = None, max_iter: int = 0):
        """Drive to optimality; mutates basis in place, returns fresh state."""
        m = self.m
        degenerate_run = 0
        bland = self.bland_after == 0
        max_iter = max_iter or (2000 + 60 * (m + self.n))
        since_refactor = 0
        verified = False  # state recomputed from a fresh factorization
        forbidden_idx = np.asarray(sorted(forbidden), dtype=int) if forbidden else None
        for _ in range(max_iter):
            self.iterations += 1
            lam = cost[basis] @ b_inv
            rc = self._reduced_costs(cost, lam, include_artificial)
            if not np.isfinite(rc).all():
                if verified:
                    raise _NumericalBreakdown()
                b_inv, x_b = self._refactor(basis)
                since_refactor = 0
                verified = True
                continue
            if forbidden_idx is not None:
                rc[forbidden_idx] = np.inf
            rc[basis] = np.inf  # basic columns never re-enter
            if bland:
                candidates = np.flatnonzero(rc < -_RC_TOL)
                enter = int(candidates[0]) if candidates.size else -1
            else:
                enter = int(np.argmin(rc))
                if rc[enter] >= -_RC_TOL:
                    enter = -1
            if enter < 0:
                if verified or since_refactor == 0:
                    return basis, b_inv, x_b, lam
                # re-check optimality against a clean factorization
                b_inv, x_b = self._refactor(basis)
                since_refactor = 0
                verified = True
                continue
            verified = False
            direction = b_inv @ self.column(enter)
            if not np.isfinite(direction).all():
                b_inv, x_b = self._refactor(basis)
                since_refactor = 0
                direction = b_inv @ self.column(enter)
                if not np.isfinite(direction).all():
                    raise _NumericalBreakdown()
            positive = direction > _PIVOT_TOL
            if not positive.any():
                if since_refactor:
                    b_inv, x_b = self._refactor(basis)
                    since_refactor = 0
                    direction = b_inv @ self.column(enter)
                    positive = direction > _PIVOT_TOL
                if not positive.any():
                    ray = np.zeros(self.n + 2 * m)
                    ray[enter] = 1.0
                    for i in range(m):
                        ray[basis[i]] = -direction[i]
                    raise _Unbounded(ray[: self.n])
            # Harris-style two-pass ratio test: a small feasibility slack
            # widens the candidate set so a well-scaled pivot can be chosen
            ratios = np.where(positive, x_b / np.where(positive, direction, 1.0), np.inf)
            limit = np.min(np.where(positive, (x_b + 1e-9) / np.where(positive, direction, 1.0), np.inf))
            tie = np.flatnonzero(positive & (ratios <= limit))
            if bland:
                leave = int(tie[np.argmin(basis[tie])])
            else:
                leave = int(tie[np.argmax(direction[tie])])
            theta = max(float(ratios[leave]), 0.0)
            if theta < _DEGEN_TOL:
                degenerate_run += 1
                if degenerate_run > self.bland_after and not bland:
                    bland = True
                    log.debug("simplex: switching to Bland's rule after %d degenerate pivots", degenerate_run)
            else:
                degenerate_run = 0
            # basis exchange and product-form inverse update
            x_b -= theta * direction
            x_b[leave] = theta
            pivot_row = b_inv[leave] / direction[leave]
            b_inv -= np.outer(direction, pivot_row)
            b_inv[leave] = pivot_row
            basis[leave] = enter
            x_b = np.maximum(x_b, 0.0)
            since_refactor += 1
            if since_refactor >= self.refactor_every or np.max(np.abs(pivot_row)) > self._GROWTH_LIMIT:
                b_inv, x_b = self._refactor(basis)
                since_refactor = 0
        raise _IterationLimit()

    def _dual_warm(self, cost: np.ndarray, prev_basis: np.ndarray, n_new: int):
        """Starting state for the dual simplex from a previous round's basis.

        Previous members keep their (already remapped) columns and every new
        row contributes its slack; the result is dual-feasible because the new
        slacks carry zero duals, but may be primal-infeasible on the new rows.
        """
        m, n = self.m, self.n
        cols = list(prev_basis) + [n + r for r in range(m - n_new, m)]
        if len(cols) != m:
            return None
        basis = np.asarray(cols, dtype=int)
        b_inv, x_b = self._refactor(basis, clamp=False)
        if not (np.isfinite(b_inv).all() and np.isfinite(x_b).all()):
            return None
        lam = cost[basis] @ b_inv
        rc = self._reduced_costs(cost, lam, include_artificial=True)
        rc[basis] = 0.0
        if float(np.min(rc)) < -1e-7:
            return None
        return basis, b_inv, x_b

    def dual_run(self, cost: np.ndarray, basis: np.ndarray, b_inv: np.ndarray, x_b: np.ndarray,
                 max_iter: int = 0):
        """Dual simplex from a dual-feasible basis; drives out negative basics.

        Raises _DualInfeasible when a negative row admits no entering column,
        which certifies primal infeasibility.
        """
        m, n = self.m, self.n
        max_iter = max_iter or (2000 + 60 * (m + self.n))
        since_refactor = 0
        degenerate_run = 0
        stalls = 0  # consecutive refactor-without-pivot passes
        refactor_budget = 16  # a basis this unstable is cheaper to resolve cold
        bland = self.bland_after == 0
        basic_mask = np.zeros(n + 2 * m, dtype=bool)
        basic_mask[basis] = True

        def refactor():
            nonlocal refactor_budget
            refactor_budget -= 1
            if refactor_budget < 0:
                raise _NumericalBreakdown("refactor-budget")
            return self._refactor(basis, clamp=False)

        for _ in range(max_iter):
            self.iterations += 1
            if stalls > 3:
                raise _NumericalBreakdown("stalls")
            neg = x_b < -1e-9
            if not neg.any():
                if since_refactor:
                    b_inv, x_b = refactor()
                    since_refactor = 0
                    if (x_b < -1e-9).any():
                        stalls += 1
                        continue
                lam = cost[basis] @ b_inv
                return basis, b_inv, np.maximum(x_b, 0.0), lam
            leave = int(np.flatnonzero(neg)[0]) if bland else int(np.argmin(x_b))
            w = b_inv[leave]
            lam = cost[basis] @ b_inv
            if not (np.isfinite(w).all() and np.isfinite(lam).all()):
                b_inv, x_b = refactor()
                since_refactor = 0
                w = b_inv[leave]
                lam = cost[basis] @ b_inv
                if not (np.isfinite(w).all() and np.isfinite(lam).all()):
                    raise _NumericalBreakdown("nonfinite-after-refactor")
            # entering candidates: structural and slack columns with alpha < 0
            alpha = np.empty(n + m)
            alpha[:n] = w @ self.a
            alpha[n:] = w * self.slack_sign
            rc = np.empty(n + m)
            rc[:n] = cost[:n] - lam @ self.a
            rc[n:] = cost[n : n + m] - lam * self.slack_sign
            eligible = (alpha < -_PIVOT_TOL) & ~basic_mask[: n + m]
            if not eligible.any():
                if since_refactor:
                    b_inv, x_b = refactor()
                    since_refactor = 0
                    stalls += 1
                    continue
                raise _DualInfeasible()
            rc_pos = np.maximum(rc, 0.0)
            neg_alpha = np.where(eligible, -alpha, 1.0)
            ratios = np.where(eligible, rc_pos / neg_alpha, np.inf)
            theta = float(np.min(ratios))
            if bland:
                tie = np.flatnonzero(eligible & (ratios <= theta + 1e-12))
                enter = int(tie[0])
            else:
                # two-pass ratio test: admit anything within a small dual
                # feasibility slip, then take the strongest pivot among those
                relaxed = float(np.min(np.where(eligible, (rc_pos + 1e-7) / neg_alpha, np.inf)))
                tie = np.flatnonzero(eligible & (ratios <= relaxed))
                enter = int(tie[np.argmax(-alpha[tie])])
            theta = float(ratios[enter])
            if -alpha[enter] < 1e-9:
                # best pivot sits at the tolerance floor; the update would be
                # pure noise, so hand the working set to the cold solver
                raise _NumericalBreakdown("junk-pivot")
            if theta < _DEGEN_TOL:
                degenerate_run += 1
                if degenerate_run > self.bland_after and not bland:
                    bland = True
                    log.debug("dual simplex: switching to Bland's rule after %d degenerate steps", degenerate_run)
            else:
                degenerate_run = 0
            direction = b_inv @ self.column(enter)
            if abs(direction[leave]) < _PIVOT_TOL or not np.isfinite(direction).all():
                b_inv, x_b = refactor()
                since_refactor = 0
                stalls += 1
                continue
            stalls = 0
            step = x_b[leave] / direction[leave]
            x_b -= step * direction
            x_b[leave] = step
            pivot_row = b_inv[leave] / direction[leave]
            b_inv -= np.outer(direction, pivot_row)
            b_inv[leave] = pivot_row
            basic_mask[basis[leave]] = False
            basic_mask[enter] = True
            basis[leave] = enter
            since_refactor += 1
            if since_refactor >= self.refactor_every or np.max(np.abs(pivot_row)) > self._GROWTH_LIMIT:
                b_inv, x_b = refactor()
                since_refactor = 0
        raise _IterationLimit()

    def solve(self, cost_structural: np.ndarray, warm: Optional[tuple] = None):
        """Two-phase solve; returns (status, y, lam, basis) in standardized space."""
        m, n = self.m, self.n
        rows = np.arange(m)
        phase2_cost = np.zeros(n + 2 * m)
        phase2_cost[:n] = cost_structural
        if warm is not None:
            state = self._dual_warm(phase2_cost, *warm)
            if state is not None:
                basis, b_inv, x_b = state
                try:
                    basis, b_inv, x_b, lam = self.dual_run(phase2_cost, basis, b_inv, x_b)
                except _DualInfeasible:
                    self.warm_note = "dual-infeasible"
                    return "infeasible", None, None, None
                except (_NumericalBreakdown, _IterationLimit) as exc:
                    # fall through to the cold two-phase path
                    self.warm_note = type(exc).__name__ + ":" + getattr(exc, "reason", "")
                else:
                    self.warm_note = "dual-ok"
                    y = np.zeros(n)
                    structural = basis < n
                    y[basis[structural]] = x_b[structural]
                    return "optimal", y, lam, basis
            else:
                self.warm_note = "verify-failed"
        # slack basis where the slack is feasible, artificial elsewhere;
        # both column kinds are unit vectors so the basis inverse is I
        basis = np.where(self.slack_sign > 0, n + rows, n + m + rows)
        b_inv = np.eye(m)
        x_b = self.b.copy()
        phase1_cost = np.zeros(n + 2 * m)
        phase1_cost[n + m :] = 1.0
        # phase 1 is only needed if some artificial starts at a nonzero value
        if float(phase1_cost[basis] @ x_b) > 0.0:
            try:
                basis, b_inv, x_b, _ = self.run(phase1_cost, basis, b_inv, x_b, include_artificial=True)
            except _Unbounded:  # phase-1 objective is bounded below by 0
                raise _NumericalBreakdown()
        if float(phase1_cost[basis] @ x_b) > 1e-8 * max(1.0, float(np.max(self.b, initial=0.0))):
            return "infeasible", None, None, basis

        # pivot leftover artificials out or drop their redundant rows
        keep = np.ones(m, dtype=bool)
        in_basis = set(basis.tolist())
        for i in range(m):
            if basis[i] >= n + m:
                row = b_inv[i] @ self.a  # candidates among structural columns
                pick = [j for j in np.flatnonzero(np.abs(row) > 1e-9) if j not in in_basis]
                if pick:
                    enter = int(pick[0])
                    direction = b_inv @ self.column(enter)
                    pivot_row = b_inv[i] / direction[i]
                    b_inv -= np.outer(direction, pivot_row)
                    b_inv[i] = pivot_row
                    in_basis.discard(int(basis[i]))
                    in_basis.add(enter)
                    basis[i] = enter
                    x_b = np.maximum(b_inv @ self.b, 0.0)
                else:
                    keep[i] = False  # dependent row, harmless to ignore
        forbidden = set(range(n + m, n + 2 * m))
        if not keep.all():
            # freeze dependent rows by keeping their artificials pinned at zero
            forbidden |= {int(basis[i]) for i in range(m) if not keep[i]}

        phase2_cost = np.zeros(n + 2 * m)
        phase2_cost[:n] = cost_structural
        try:
            basis, b_inv, x_b, lam = self.run(
                phase2_cost, basis, b_inv, x_b, include_artificial=True, forbidden=forbidden
            )
        except _Unbounded as ray:
            return "unbounded", ray.ray_y, None, None
        y = np.zeros(n)
        structural = basis < n
        y[basis[structural]] = x_b[structural]
        return "optimal", y, lam, basis


def _solve_working(std: _Standardized, a_rows: np.ndarray, b_rows: np.ndarray,
                   safe: bool = False, warm: Optional[tuple] = None):
    """Solve the working-row subset; warm is (basis, y, m_total) of the last solve."""
    a_std, b_std = std.rows_to_std(a_rows, b_rows)
    a_bnd, b_bnd = std.bound_rows()
    a_all = np.vstack([a_bnd, a_std]) if a_bnd.size else a_std
    b_all = np.concatenate([b_bnd, b_std]) if a_bnd.size else b_std
    if a_all.shape[0] == 0:
        a_all = np.zeros((1, std.n_cols))
        b_all = np.zeros(1)
    m_total = a_all.shape[0]
    simplex = _DenseSimplex(a_all, b_all, bland_after=10 * std.problem.n_vars, safe=safe)
    warm_arg = None
    if warm is not None and not safe:
        prev_basis, m_prev = warm
        if m_total >= m_prev:
            # rows are append-only between warm rounds, so slack indices are
            # stable and artificial indices shift by the growth in row count
            n = std.n_cols
            remapped = prev_basis.copy()
            arts = remapped >= n + m_prev
            remapped[arts] += m_total - m_prev
            warm_arg = (remapped, m_total - m_prev)
    status, y, lam, basis = simplex.solve(std.c, warm=warm_arg)
    return status, y, lam, simplex, (basis, m_total) if basis is not None else None


def _remap_after_drop(warm: Optional[tuple], std: _Standardized, keep: np.ndarray) -> Optional[tuple]:
    """Translate a warm basis across a working-row drop.

    Dropped rows are strictly slack at the optimum, so their slacks are basic
    and leave the basis together with their rows; everything else shifts down.
    Returns None when the translation does not line up (cold start instead).
    """
    if warm is None:
        return None
    basis_prev, m_prev = warm
    nb = len(std.ub_rows)
    n = std.n_cols
    if m_prev != nb + keep.size:
        return None
    rowmap = -np.ones(nb + keep.size, dtype=int)
    rowmap[:nb] = np.arange(nb)
    rowmap[nb:][keep] = nb + np.arange(int(keep.sum()))
    m_new = nb + int(keep.sum())
    out = []
    for j in basis_prev:
        if j < n:
            out.append(int(j))
            continue
        r = int(j) - n
        is_art = r >= m_prev
        if is_art:
            r -= m_prev
        r_new = rowmap[r]
        if r_new < 0:
            if is_art:
                return None  # basic artificial on a dropped row: do not warm start
            continue  # basic slack leaves with its row
        out.append(n + m_new + r_new if is_art else n + r_new)
    if len(out) != m_new:
        return None
    return np.asarray(out, dtype=int), m_new


def _ray_is_valid(problem: LPProblem, a_rows: np.ndarray, dx: np.ndarray) -> bool:
    """Check an unboundedness certificate against working rows and bounds."""
    scale = float(np.max(np.abs(dx), initial=0.0))
    if scale <= 0.0 or not np.isfinite(dx).all():
        return False
    tol = 1e-7 * max(1.0, scale)
    if float(problem.objective @ dx) >= -1e-9 * max(1.0, scale):
        return False
    if a_rows.size and float(np.max(a_rows @ dx)) > tol:
        return False
    finite_hi = np.isfinite(problem.upper)
    finite_lo = np.isfinite(problem.lower)
    if np.any(dx[finite_hi] > tol) or np.any(dx[finite_lo] < -tol):
        return False
    return True


def _scan_violations(problem: LPProblem, x: np.ndarray, skip: set) -> list:
    found = []
    for bi, block in enumerate(problem.blocks):
        if block.n_rows == 0:
            continue
        res = block.residuals(x)
        idx = np.flatnonzero(res > _VIOLATION_TOL)
        if idx.size == 0:
            continue
        fresh = [i for i in idx if (bi, int(i)) not in skip]
        if not fresh:
            continue
        fresh = np.asarray(fresh)
        order = np.argsort(res[fresh])[::-1]
        if order.size > _BATCH_PER_BLOCK:
            # top offenders plus an even stride through the rest: violated
            # rows cluster spatially, and pure top-k would spend the whole
            # batch on one neighborhood
            head = order[: _BATCH_PER_BLOCK // 2]
            rest = order[_BATCH_PER_BLOCK // 2 :]
            step = max(1, rest.size // (_BATCH_PER_BLOCK - head.size))
            order = np.concatenate([head, rest[::step][: _BATCH_PER_BLOCK - head.size]])
        found.extend((float(res[fresh[k]]), bi, int(fresh[k])) for k in order)
    found.sort(reverse=True)
    return found[:_BATCH_TOTAL]


def _seed_rows(problem: LPProblem) -> list:
    """Initial working rows: an even stride over every block.

    The violated rows of these problems concentrate wherever the current
    relaxation is unconstrained, so starting from a spatially even skeleton
    removes most of the early thrash; small problems simply start complete.
    """
    budget = max(512, 3 * problem.n_vars)
    total = problem.n_rows
    if total <= 2 * budget:
        return [(bi, ri) for bi, b in enumerate(problem.blocks) for ri in range(b.n_rows)]
    out = []
    for bi, block in enumerate(problem.blocks):
        if block.n_rows == 0:
            continue
        quota = max(1, int(round(budget * block.n_rows / total)))
        step = max(1, block.n_rows // quota)
        out.extend((bi, int(ri)) for ri in range(0, block.n_rows, step))
    return out


def _scan_ray(problem: LPProblem, dx: np.ndarray, skip: set) -> list:
    found = []
    for bi, block in enumerate(problem.blocks):
        if block.n_rows == 0:
            continue
        width = block.dense.shape[1]
        vals = block.scale * (block.dense @ dx[block.col_start : block.col_start + width])
        if block.extra_idx.size:
            vals += block.extra_coef @ dx[block.extra_idx]
        idx = np.flatnonzero(vals > 1e-10)
        fresh = [i for i in idx if (bi, int(i)) not in skip]
        if not fresh:
            continue
        fresh = np.asarray(fresh)
        order = np.argsort(vals[fresh])[::-1][:_BATCH_PER_BLOCK]
        found.extend((float(vals[fresh[k]]), bi, int(fresh[k])) for k in order)
    found.sort(reverse=True)
    return found[:_BATCH_TOTAL]


def _solve_builtin(problem: LPProblem) -> LPSolution:
    std = _Standardized(problem, _column_scales(problem))
    working: list[tuple[int, int]] = []
    added_round: list[int] = []
    sticky: list[bool] = []
    working_set: set = set()
    dropped_ids: set = set()
    a_rows = np.empty((0, problem.n_vars))
    b_rows = np.empty(0)
    total_iterations = 0
    rows_seen = 0
    safe = False
    warm = None

    seed = _seed_rows(problem)
    if seed:
        rows = [problem.blocks[bi].row(ri, problem.n_vars) for bi, ri in seed]
        a_rows = np.asarray([r[0] for r in rows])
        b_rows = np.asarray([r[1] for r in rows])
        working = list(seed)
        added_round = [0] * len(seed)
        sticky = [True] * len(seed)  # the skeleton is never dropped
        working_set = set(seed)
        rows_seen = len(seed)

    for round_no in range(_MAX_ROUNDS):
        try:
            status, y, lam, simplex, warm = _solve_working(std, a_rows, b_rows, safe=safe, warm=warm)
        except _IterationLimit:
            return LPSolution("iteration-limit", None, np.nan, np.nan, rows_used=rows_seen)
        except _NumericalBreakdown:
            if safe:
                raise RuntimeError("built-in simplex broke down on this problem")
            log.warning("simplex: numerical breakdown, retrying working set in safe mode")
            safe = True
            warm = None
            continue
        total_iterations += simplex.iterations
        if status == "infeasible":
            # infeasibility of a row subset certifies the full problem
            return LPSolution(
                "infeasible", None, np.nan, np.nan,
                iterations=total_iterations, rows_used=rows_seen,
            )
        if status == "unbounded":
            dx = std.ray_to_original(y)
            if not _ray_is_valid(problem, a_rows, dx):
                if safe:
                    raise RuntimeError("built-in simplex produced an invalid ray")
                log.warning("simplex: unverifiable ray, retrying working set in safe mode")
                safe = True
                warm = None
                continue
            additions = _scan_ray(problem, dx, working_set)
            if not additions:
                return LPSolution(
                    "unbounded", None, -np.inf, np.nan,
                    iterations=total_iterations, rows_used=rows_seen,
                )
        else:
            x = std.to_original(y)
            additions = _scan_violations(problem, x, working_set)
            if not additions:
                objective = float(problem.objective @ x)
                residual = problem.max_residual(x)
                n_bound_rows = len(std.ub_rows)
                # non-working rows carry zero duals, so the dual objective over
                # the working set certifies the full problem
                dual_obj = np.nan
                if lam is not None:
                    dual_obj = float(lam @ simplex.b) + std.const
                gap = abs(objective - dual_obj) / max(1.0, abs(objective)) if np.isfinite(dual_obj) else np.nan
                log.info(
                    "solved: %d working of %d rows over %d rounds, objective %.6g",
                    len(working) + n_bound_rows, problem.n_rows, round_no + 1, objective,
                )
                return LPSolution(
                    "optimal", x, objective, residual,
                    duality_gap=gap, iterations=total_iterations, rows_used=rows_seen,
                )
            # prune rows with slack at this optimum so the working set tracks
            # the active set; fresh rows get a grace period, and any row that
            # had to be re-added after a drop is pinned for good, which bounds
            # the drop/re-add oscillation and forces termination
            if a_rows.shape[0]:
                slack_ok = (a_rows @ x - b_rows) > -_DROP_SLACK
                fresh = np.asarray(added_round) > round_no - _DROP_GRACE
                keep = slack_ok | fresh | np.asarray(sticky, dtype=bool)
                if not keep.all():
                    for k in np.flatnonzero(~keep):
                        working_set.discard(working[k])
                        dropped_ids.add(working[k])
                    working = [w for w, kept in zip(working, keep) if kept]
                    added_round = [r for r, kept in zip(added_round, keep) if kept]
                    sticky = [s for s, kept in zip(sticky, keep) if kept]
                    warm = _remap_after_drop(warm, std, keep)
                    a_rows = a_rows[keep]
                    b_rows = b_rows[keep]
        new_rows = []
        new_rhs = []
        for _, bi, ri in additions:
            coeffs, rhs = problem.blocks[bi].row(ri, problem.n_vars)
            new_rows.append(coeffs)
            new_rhs.append(rhs)
            working.append((bi, ri))
            added_round.append(round_no)
            sticky.append((bi, ri) in dropped_ids)
            working_set.add((bi, ri))
        rows_seen += len(additions)
        a_rows = np.vstack([a_rows, np.asarray(new_rows)])
        b_rows = np.concatenate([b_rows, np.asarray(new_rhs)])
    return LPSolution("iteration-limit", None, np.nan, np.nan, rows_used=rows_seen)


# --- adapters ---------------------------------------------------------------


def _materialize_sparse(problem: LPProblem):
    """Assemble all block rows into one CSR matrix without intermediate copies.

    Every row of a block shares the same column pattern (a contiguous dense
    slab plus the fixed extra columns), so the index arrays can be tiled and
    the data filled blockwise into preallocated buffers.
    """
    from scipy import sparse

    nnz = sum(b.n_rows * (b.dense.shape[1] + b.extra_idx.size) for b in problem.blocks)
    if nnz > 5e7:
        raise ValueError(
            "problem too large to materialize for an external backend; "
            "use the built-in 'simplex' optimiser"
        )
    m = problem.n_rows
    data = np.empty(int(nnz))
    indices = np.empty(int(nnz), dtype=np.int32)
    indptr = np.zeros(m + 1, dtype=np.int64)
    b_ub = np.empty(m)
    pos = 0
    row0 = 0
    for block in problem.blocks:
        if block.n_rows == 0:
            continue
        width = block.dense.shape[1]
        per_row = width + block.extra_idx.size
        cols = np.concatenate(
            [np.arange(block.col_start, block.col_start + width), block.extra_idx]
        ).astype(np.int32)
        span = block.n_rows * per_row
        indices[pos : pos + span] = np.tile(cols, block.n_rows)
        chunk = data[pos : pos + span].reshape(block.n_rows, per_row)
        np.multiply(block.dense, block.scale, out=chunk[:, :width])
        if block.extra_idx.size:
            chunk[:, width:] = block.extra_coef
        indptr[row0 + 1 : row0 + block.n_rows + 1] = pos + per_row * np.arange(
            1, block.n_rows + 1, dtype=np.int64
        )
        b_ub[row0 : row0 + block.n_rows] = block.rhs
        pos += span
        row0 += block.n_rows
    a_ub = sparse.csr_matrix((data, indices, indptr), shape=(m, problem.n_vars))
    return a_ub, b_ub


def _solve_highs(problem: LPProblem) -> LPSolution:
    from scipy.optimize import linprog

    a_ub, b_ub = _materialize_sparse(problem)
    scales = _column_scales(problem)
    a_ub.data *= scales.take(a_ub.indices)
    a_ub = a_ub.tocsc()  # what the backend wants; convert once, here
    options = {
        "primal_feasibility_tolerance": 1e-9,
        "dual_feasibility_tolerance": 1e-9,
    }
    method = "highs"
    if a_ub.nnz > 5e6:
        # presolve duplicates a matrix this dense-ish several times over;
        # plain dual simplex stays within a few hundred MB of the input
        method = "highs-ds"
        options["presolve"] = False
    result = linprog(
        problem.objective * scales,
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=np.column_stack([problem.lower / scales, problem.upper / scales]),
        method=method,
        options=options,
    )
    status_map = {0: "optimal", 1: "iteration-limit", 2: "infeasible", 3: "unbounded"}
    status = status_map.get(result.status, "iteration-limit")
    if status != "optimal":
        return LPSolution(status, None, np.nan, np.nan)
    x = scales * np.asarray(result.x)
    return LPSolution(
        "optimal",
        x,
        float(problem.objective @ x),
        problem.max_residual(x),
        iterations=int(result.nit),
        rows_used=problem.n_rows,
    )


_ROWGEN_BOX = 1e6  # artificial bound on free columns inside subproblems


def _solve_rowgen(problem: LPProblem) -> LPSolution:
    """Row generation with external subproblem solves.

    The working set never exceeds a few thousand rows, so the subproblems
    are tiny dense LPs regardless of the full row count; this is the only
    backend that handles the biggest lattice problems without either the
    memory of a full materialization or the warm-start fragility of the
    built-in simplex.  Free columns get an artificial box so a subset LP
    can never be unbounded; the box is widened if it ever binds.
    """
    from scipy.optimize import linprog

    scales = _column_scales(problem)
    lower = problem.lower / scales
    upper = problem.upper / scales
    box = _ROWGEN_BOX
    objective = problem.objective * scales

    def prepared_row(bi: int, ri: int) -> tuple[np.ndarray, float]:
        # column scaling plus row equilibration; feasible set is unchanged
        coeffs, rhs = problem.blocks[bi].row(ri, problem.n_vars)
        row = coeffs * scales
        norm = float(np.max(np.abs(row)))
        if norm > 0.0:
            row /= norm
            rhs /= norm
        return row, rhs

    working: list[tuple[int, int]] = list(_seed_rows(problem))
    working_set = set(working)
    sticky = [True] * len(working)
    rows = [prepared_row(bi, ri) for bi, ri in working]
    a_rows = np.asarray([r[0] for r in rows]) if rows else np.empty((0, problem.n_vars))
    b_rows = np.asarray([r[1] for r in rows]) if rows else np.empty(0)
    rows_seen = len(working)
    total_iterations = 0

    for _ in range(_MAX_ROUNDS):
        bounds = np.column_stack([np.maximum(lower, -box), np.minimum(upper, box)])
        result = linprog(
            objective,
            A_ub=a_rows,
            b_ub=b_rows,
            bounds=bounds,
            method="highs",
            options={
                "primal_feasibility_tolerance": 1e-9,
                "dual_feasibility_tolerance": 1e-9,
            },
        )
        if result.status == 4:
            # dual simplex on a degenerate working set occasionally reports
            # numerical trouble; interior point is slower but sturdier
            result = linprog(
                objective, A_ub=a_rows, b_ub=b_rows, bounds=bounds, method="highs-ipm"
            )
        total_iterations += int(result.nit)
        if result.status == 2:
            # the artificial box itself can cut off every feasible point, so
            # probe the subset with the real bounds before certifying
            probe = linprog(
                np.zeros_like(objective),
                A_ub=a_rows,
                b_ub=b_rows,
                bounds=np.column_stack([lower, upper]),
                method="highs",
            )
            if probe.status == 2:
                # an infeasible subset certifies the full problem
                return LPSolution(
                    "infeasible", None, np.nan, np.nan,
                    iterations=total_iterations, rows_used=rows_seen,
                )
            log.warning("row generation: artificial box binds, widening")
            box *= 100.0
            continue
        if result.status != 0:
            raise RuntimeError(
                f"row generation subproblem failed with status {result.status}"
            )
        y = np.asarray(result.x)
        at_box = (np.abs(y) >= box * (1 - 1e-9)) & ~np.isfinite(
            np.where(y > 0, problem.upper, problem.lower)
        )
        x = scales * y
        additions = _scan_violations(problem, x, working_set)
        if not additions:
            if at_box.any():
                log.warning("row generation: artificial box binds, widening")
                box *= 100.0
                continue
            objective_value = float(problem.objective @ x)
            residual = problem.max_residual(x)
            log.info(
                "solved: %d working of %d rows, objective %.6g",
                len(working), problem.n_rows, objective_value,
            )
            return LPSolution(
                "optimal", x, objective_value, residual,
                iterations=total_iterations, rows_used=rows_seen,
            )
        # drop clearly slack non-seed rows so the working set tracks the
        # active set instead of accumulating every row ever added
        if a_rows.shape[0]:
            slack_ok = (a_rows @ y - b_rows) > -_DROP_SLACK
            keep = slack_ok | np.asarray(sticky, dtype=bool)
            if not keep.all():
                for k in np.flatnonzero(~keep):
                    working_set.discard(working[k])
                working = [w for w, kept in zip(working, keep) if kept]
                sticky = [s for s, kept in zip(sticky, keep) if kept]
                a_rows = a_rows[keep]
                b_rows = b_rows[keep]
        new_rows = []
        new_rhs = []
        for _, bi, ri in additions:
            coeffs, rhs = prepared_row(bi, ri)
            new_rows.append(coeffs)
            new_rhs.append(rhs)
            working.append((bi, ri))
            sticky.append(False)
            working_set.add((bi, ri))
        rows_seen += len(additions)
        a_rows = np.vstack([a_rows, np.asarray(new_rows)])
        b_rows = np.concatenate([b_rows, np.asarray(new_rhs)])
    return LPSolution("iteration-limit", None, np.nan, np.nan, rows_used=rows_seen)


_BACKENDS = {
    "simplex": _solve_builtin,
    "highs": _solve_highs,
    "HighsOptimiser": _solve_highs,
    "rowgen": _solve_rowgen,
}


def available_backends() -> tuple:
    return tuple(sorted(_BACKENDS))


def solve_lp(problem: LPProblem, backend: str = "simplex") -> LPSolution:
    if backend not in _BACKENDS:
        raise ValueError(
            f"unknown optimiser {backend!r}; available: {', '.join(available_backends())}"
        )
    solution = _BACKENDS[backend](problem)
    if solution.status == "optimal" and solution.max_residual > 1e-8:
        raise RuntimeError(
            f"solver returned residual {solution.max_residual:.3e} above tolerance"
        )
    return solution


# --- text export ------------------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _row_text(names, coeffs) -> str:
    terms = []
    for j in np.flatnonzero(np.abs(coeffs) > 0):
        coef = coeffs[j]
        sign = "-" if coef < 0 else "+"
        terms.append(f"{sign} {_fmt(abs(coef))} {names[j]}")
    if not terms:
        return "0"
    text = " ".join(terms)
    return text[2:] if text.startswith("+ ") else text


def export_lp(problem: LPProblem) -> str:
    """Serialize to LP text format (objective, rows, bounds)."""
    names = problem.var_names
    lines = ["Minimize", f" obj: {_row_text(names, problem.objective)}", "Subject To"]
    counter = 0
    for block in problem.blocks:
        for i in range(block.n_rows):
            coeffs, rhs = block.row(i, problem.n_vars)
            lines.append(f" {block.name}_{i}: {_row_text(names, coeffs)} <= {_fmt(rhs)}")
            counter += 1
    lines.append("Bounds")
    for j, name in enumerate(names):
        lo, hi = problem.lower[j], problem.upper[j]
        if np.isinf(lo) and np.isinf(hi):
            lines.append(f" {name} free")
        elif np.isinf(hi):
            lines.append(f" {name} >= {_fmt(lo)}")
        elif np.isinf(lo):
            lines.append(f" {name} <= {_fmt(hi)}")
        else:
            lines.append(f" {_fmt(lo)} <= {name} <= {_fmt(hi)}")
    lines.append("End")
    return "\n".join(lines) + "\n"
