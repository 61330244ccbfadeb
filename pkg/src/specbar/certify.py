"""End-to-end certificate synthesis, falsification, and Monte Carlo baseline.

The pipeline goes dataset -> kernel fit -> feature map -> lattice ->
tightening coefficients -> LP -> certificate.  All randomness is owned by
the config seed, so a run is reproducible bit-for-bit.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Configuration, config_to_dict
from .data import Dataset, DynamicsModel
from .estimator import FittedEstimator, KernelParams, fit, r2_score
from .geometry import RegionSet, SafetySpec, build_lattice, unit_transform
from .relaxation import (
    LPProblem,
    PSOConfig,
    TighteningCoefficients,
    assemble_lp,
    coefficient_A,
    coefficient_C,
)
from .solve import LPSolution, solve_lp
from .spectral import (
    FeatureMap,
    build_feature_map,
    features,
    features_on_lattice,
    transition_matrix,
)

__all__ = [
    "BarrierCertificate",
    "FalsificationReport",
    "SynthesisResult",
    "barrier_grid",
    "evaluate_barrier",
    "falsify",
    "monte_carlo_safety",
    "result_json",
    "safety_probability",
    "synthesize",
]

log = logging.getLogger(__name__)

_GH_NODES = 9  # Gauss-Hermite nodes per noise dimension for condition (c)


def safety_probability(eta: float, c: float, horizon: int) -> float:
    """Lower bound max(0, 1 - (eta + c*T)); zero means the bound is vacuous."""
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must be in [0, 1), got {eta}")
    if c < 0.0:
        raise ValueError(f"c must be >= 0, got {c}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    raw = 1.0 - (eta + c * horizon)
    if raw <= 0.0:
        log.warning("safety bound 1 - (eta + c*T) = %.4g is vacuous, clamping to 0", raw)
        return 0.0
    return raw


@dataclass(frozen=True, eq=False)
class BarrierCertificate:
    """Synthesized barrier with its constants and provenance knobs."""

    b: np.ndarray
    eta: float
    c: float
    horizon: int
    bound: float
    vacuous: bool
    fmap: FeatureMap
    coeffs: TighteningCoefficients

    def __post_init__(self):
        if not np.all(np.isfinite(self.b)):
            raise ValueError("barrier coefficients must be finite")


def evaluate_barrier(cert: BarrierCertificate, x: np.ndarray) -> np.ndarray:
    """B(x) = phi(x) . b for one point or a batch."""
    return features(cert.fmap, x) @ cert.b


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    status: str  # certified | infeasible | failed
    config: Configuration
    lp: LPSolution
    certificate: Optional[BarrierCertificate] = None
    r2: float = float("nan")
    timings: dict = field(default_factory=dict)
    problem: Optional[LPProblem] = None
    calibration: Optional[dict] = None


def synthesize(config: Configuration) -> SynthesisResult:
    """Run the full pipeline and return a certificate or a failure record.

    With ``verify: true`` the synthesized barrier is validated against the
    supplied dynamics and its constants are calibrated to measured extrema:
    the barrier is floor-shifted to be nonnegative on the state set and c is
    raised to the measured one-step drift ceiling.  Both operations keep
    every assembled LP row satisfied (eta absorbs the shift exactly; a
    larger c only loosens the drift rows), so the reported bound refers to
    constants that hold pointwise for the true system, not merely for the
    empirical estimator.
    """
    timings: dict[str, float] = {}
    t_all = time.perf_counter()

    def stage(name):
        log.info("stage: %s", name)
        timings[name] = time.perf_counter()
        return timings[name]

    def close(name):
        timings[name] = time.perf_counter() - timings[name]

    spec = config.safety_spec()
    n = config.n_dims
    if config.verify and config.system_dynamics is None:
        raise ValueError("verify: true requires system_dynamics")

    stage("fit")
    data = config.resolve_dataset()
    transform = unit_transform(spec.domain, config.pad)
    udata = Dataset(transform.apply(data.x), transform.apply(data.xp))
    params = KernelParams(config.sigma_f, list(config.sigma_l), config.lambda_)
    est = fit(params, udata)
    r2 = r2_score(est, udata)
    log.info("kernel fit: N=%d, in-sample r2=%.4f", udata.n_samples, r2)
    close("fit")

    stage("features")
    fmap = build_feature_map(
        transform, config.num_frequencies, np.asarray(config.feature_sigma_l), config.sigma_f
    )
    h_matrix = transition_matrix(est, fmap)
    close("features")

    stage("lattice")
    q = config.lattice_resolution
    lattice = build_lattice(q, spec, transform, config.set_scaling)
    phi = features_on_lattice(fmap, lattice)
    close("lattice")

    stage("coefficients")
    c_bound = coefficient_C(fmap.f_max, q, n)
    pso = PSOConfig(seed=config.seed)
    a_init = coefficient_A(lattice, "X0", fmap.f_max, pso, spec.init)
    a_unsafe = coefficient_A(lattice, "Xu", fmap.f_max, pso, spec.unsafe)
    a_domain = coefficient_A(lattice, "X", fmap.f_max, pso, spec.domain)
    coeffs = TighteningCoefficients(c_bound, a_domain, a_init, a_unsafe, fmap.f_max, q)
    log.info(
        "tightening: C=%.6f A_X0=%.6f A_Xu=%.6f A_X=%.6f",
        c_bound, a_init, a_unsafe, a_domain,
    )
    close("coefficients")

    stage("lp")
    comps = {
        "X0": phi[lattice.out_init],
        "Xu": phi[lattice.out_unsafe],
        "X": phi[lattice.out_domain],
    }
    problem = assemble_lp(
        phi[lattice.in_init],
        phi[lattice.in_unsafe],
        phi[lattice.in_domain],
        comps,
        h_matrix,
        coeffs,
        spec.horizon,
        epsilon=config.epsilon,
        b_bar=config.b_bar,
        kappa=config.kappa,
    )
    log.info("LP: %d rows, %d vars, optimiser %r", problem.n_rows, problem.n_vars, config.optimiser)
    solution = solve_lp(problem, config.optimiser)
    close("lp")
    timings["total"] = time.perf_counter() - t_all

    if solution.status == "infeasible":
        log.info("LP infeasible: no certificate at these hyperparameters")
        return SynthesisResult("infeasible", config, solution, r2=r2, timings=timings, problem=problem)
    if solution.status != "optimal":
        log.error("LP did not solve: %s", solution.status)
        return SynthesisResult("failed", config, solution, r2=r2, timings=timings, problem=problem)

    nf = fmap.n_features
    eta = float(solution.x[nf])
    c = float(solution.x[nf + 1])
    b = solution.x[:nf].copy()

    calibration = None
    if config.verify:
        stage("verify")
        model = config.dynamics_model()
        b, eta, c, calibration = _calibrate(b, eta, c, fmap, spec, model)
        close("verify")

    if eta >= 1.0:
        log.error("calibrated eta %.4f leaves no certifiable margin", eta)
        return SynthesisResult("failed", config, solution, r2=r2, timings=timings, problem=problem)
    bound = safety_probability(eta, c, spec.horizon)
    cert = BarrierCertificate(
        b=b,
        eta=eta,
        c=c,
        horizon=spec.horizon,
        bound=bound,
        vacuous=bound == 0.0,
        fmap=fmap,
        coeffs=coeffs,
    )
    log.info("certified: eta=%.6f c=%.6f bound=%.6f", eta, c, bound)
    return SynthesisResult(
        "certified",
        config,
        solution,
        certificate=cert,
        r2=r2,
        timings=timings,
        problem=problem,
        calibration=calibration,
    )


# --- certificate calibration -------------------------------------------------

_CAL_GUARD = 1e-9
_CAL_GRID = {1: 8001, 2: 321, 3: 61}


def _refined_extremum(fn, region: RegionSet, sign: float) -> tuple[np.ndarray, float]:
    """Deterministic grid + zoom search for min (sign=+1) or max (sign=-1).

    Three zoom rounds around the incumbent cell push the resolution far
    below the falsifier tolerances for the smooth functions involved.
    """
    lo, hi = region.bounding_box()
    n = lo.size
    g = _CAL_GRID.get(n, 41)
    box_lo, box_hi = lo.copy(), hi.copy()
    best_x, best_v = None, np.inf
    for round_ in range(4):
        axes = [np.linspace(box_lo[d], box_hi[d], g) for d in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        if round_ == 0:
            pts = pts[region.contains(pts)]
        vals = sign * fn(pts)
        k = int(np.argmin(vals))
        if vals[k] < best_v:
            best_v = float(vals[k])
            best_x = pts[k].copy()
        cell = (box_hi - box_lo) / (g - 1)
        box_lo = np.maximum(lo, best_x - cell)
        box_hi = np.minimum(hi, best_x + cell)
    return best_x, sign * best_v


def _calibrate(
    b: np.ndarray,
    eta: float,
    c: float,
    fmap: FeatureMap,
    spec: SafetySpec,
    model: DynamicsModel,
) -> tuple[np.ndarray, float, float, dict]:
    """Validate the barrier against the true dynamics and tighten constants.

    Floor shift: B and eta move up together by the measured negative
    excursion of B on the state set, which preserves every LP row.  Drift
    ceiling: c is raised to the measured maximum of E[B(f(x)+w)] - B(x),
    so the drift condition holds for the true system, not only the CME.
    """
    b = b.copy()
    barrier = lambda pts: features(fmap, pts) @ b

    x_min, b_min = _refined_extremum(barrier, spec.domain, +1.0)
    shift = 0.0
    if b_min < _CAL_GUARD:
        shift = _CAL_GUARD - b_min
        const = float(features(fmap, x_min[None, :])[0, 0])
        b[0] += shift / const
        eta += shift
        log.info("calibration: floor %.3e at %s, shifting barrier by %.3e",
                 b_min, np.round(x_min, 4).tolist(), shift)

    drift = lambda pts: _expected_next(fmap, b, model, pts) - features(fmap, pts) @ b
    x_max, d_max = _refined_extremum(drift, spec.domain, -1.0)
    c_cal = c
    if d_max + _CAL_GUARD > c:
        c_cal = d_max + _CAL_GUARD
        log.info("calibration: drift ceiling %.6e at %s (LP c was %.6e)",
                 d_max, np.round(x_max, 4).tolist(), c)
    return b, eta, c_cal, {
        "floor": b_min,
        "floor_shift": shift,
        "drift_ceiling": d_max,
    }


# --- result artifact ---------------------------------------------------------


def barrier_grid(cert: BarrierCertificate, spec: SafetySpec) -> Optional[dict]:
    """Dense barrier evaluation over the domain box for plotting (n <= 2)."""
    lo, hi = spec.domain.bounding_box()
    n = spec.domain.dimension
    if n == 1:
        xs = np.linspace(lo[0], hi[0], 401)
        vals = evaluate_barrier(cert, xs[:, None])
        return {"axes": [xs.tolist()], "values": vals.tolist()}
    if n == 2:
        xs = np.linspace(lo[0], hi[0], 81)
        ys = np.linspace(lo[1], hi[1], 81)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        vals = evaluate_barrier(cert, pts).reshape(81, 81)
        return {"axes": [xs.tolist(), ys.tolist()], "values": vals.tolist()}
    return None


def result_json(result: SynthesisResult, include_timings: bool = False) -> str:
    """Versioned JSON artifact; byte-identical across same-seed runs."""
    doc: dict = {
        "schema": 1,
        "status": result.status,
        "config": config_to_dict(result.config),
        "lp": {
            "status": result.lp.status,
            "iterations": int(result.lp.iterations),
            "rows_used": int(result.lp.rows_used),
        },
    }
    if np.isfinite(result.r2):
        doc["r2"] = float(result.r2)
    if result.lp.status == "optimal":
        doc["lp"]["objective"] = float(result.lp.objective)
        doc["lp"]["max_residual"] = float(result.lp.max_residual)
        if np.isfinite(result.lp.duality_gap):
            doc["lp"]["duality_gap"] = float(result.lp.duality_gap)
    cert = result.certificate
    if cert is not None:
        spec = result.config.safety_spec()
        doc.update(
            {
                "eta": cert.eta,
                "c": cert.c,
                "T": cert.horizon,
                "bound": cert.bound,
                "vacuous": cert.vacuous,
                "b": cert.b.tolist(),
                "frequencies": cert.fmap.freqs.tolist(),
                "masses": cert.fmap.masses.tolist(),
                "sigma_f": cert.fmap.sigma_f,
                "tightening": {
                    "C": cert.coeffs.c_bound,
                    "A_X0": cert.coeffs.a_init,
                    "A_Xu": cert.coeffs.a_unsafe,
                    "A_X": cert.coeffs.a_domain,
                },
            }
        )
        grid = barrier_grid(cert, spec)
        if grid is not None:
            doc["barrier_grid"] = grid
    if result.calibration is not None:
        doc["calibration"] = result.calibration
    if include_timings:
        doc["timings"] = {k: round(v, 6) for k, v in result.timings.items()}
    return json.dumps(doc, sort_keys=True, indent=2)


# --- numerical falsification -------------------------------------------------


@dataclass(frozen=True)
class FalsificationReport:
    """Sampled violations of the barrier conditions; empty lists mean none found."""

    condition_a: list  # (point, B(point), eta) with B > eta + tol on X0
    condition_b: list  # (point, B(point), 1.0) with B < 1 - tol on Xu
    condition_c: list  # (point, E[B+] - B, c) with drift > c + tol on X
    nonnegativity: list  # (point, B(point), 0.0) with B < -tol on X
    grid_per_dim: int
    expectation: str

    @property
    def clean(self) -> bool:
        return not (self.condition_a or self.condition_b or self.condition_c or self.nonnegativity)


def _region_grid(region: RegionSet, grid_per_dim: int) -> np.ndarray:
    """Grid over the region's bounding box filtered to members."""
    lo, hi = region.bounding_box()
    axes = [np.linspace(lo[d], hi[d], grid_per_dim) for d in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    return pts[region.contains(pts)]


def _expected_next(
    fmap: FeatureMap, b: np.ndarray, model: DynamicsModel, pts: np.ndarray
) -> np.ndarray:
    """E[B(f(x) + w)] by tensorized Gauss-Hermite over the noisy dimensions."""
    mean = model.evaluate(pts)
    noisy = np.flatnonzero(model.noise_std > 0)
    if noisy.size == 0:
        return features(fmap, mean) @ b
    nodes, weights = np.polynomial.hermite.hermgauss(_GH_NODES)
    total = np.zeros(pts.shape[0])
    # product rule over noisy dimensions; w/sqrt(pi) weights sum to 1
    for combo in np.ndindex(*([_GH_NODES] * noisy.size)):
        shift = np.zeros(pts.shape[1])
        w = 1.0
        for k, d in enumerate(noisy):
            shift[d] = np.sqrt(2.0) * model.noise_std[d] * nodes[combo[k]]
            w *= weights[combo[k]] / np.sqrt(np.pi)
        total += w * (features(fmap, mean + shift) @ b)
    return total


def falsify(
    cert: BarrierCertificate,
    spec: SafetySpec,
    model: Optional[DynamicsModel] = None,
    grid_per_dim: int = 100,
    tol: float = 1e-6,
) -> FalsificationReport:
    """Grid search for counterexamples to the certified conditions.

    Checks B <= eta on X0, B >= 1 on Xu, B >= 0 on X, and, when the true
    dynamics are supplied, the drift condition E[B(X+)] - B <= c on X with
    the expectation taken by Gauss-Hermite quadrature.
    """
    if grid_per_dim < 2:
        raise ValueError("grid_per_dim must be >= 2")

    cond_a = []
    pts = _region_grid(spec.init, grid_per_dim)
    if pts.size:
        vals = evaluate_barrier(cert, pts)
        for i in np.flatnonzero(vals > cert.eta + tol):
            cond_a.append((tuple(pts[i]), float(vals[i]), cert.eta))

    cond_b = []
    pts = _region_grid(spec.unsafe, grid_per_dim)
    if pts.size:
        vals = evaluate_barrier(cert, pts)
        for i in np.flatnonzero(vals < 1.0 - tol):
            cond_b.append((tuple(pts[i]), float(vals[i]), 1.0))

    cond_c = []
    nonneg = []
    pts = _region_grid(spec.domain, grid_per_dim)
    if pts.size:
        vals = evaluate_barrier(cert, pts)
        for i in np.flatnonzero(vals < -tol):
            nonneg.append((tuple(pts[i]), float(vals[i]), 0.0))
        if model is not None:
            drift = _expected_next(cert.fmap, cert.b, model, pts) - vals
            for i in np.flatnonzero(drift > cert.c + tol):
                cond_c.append((tuple(pts[i]), float(drift[i]), cert.c))

    report = FalsificationReport(
        condition_a=cond_a,
        condition_b=cond_b,
        condition_c=cond_c,
        nonnegativity=nonneg,
        grid_per_dim=grid_per_dim,
        expectation=f"gauss-hermite-{_GH_NODES}" if model is not None else "none",
    )
    if report.clean:
        log.info("falsifier: no violations at grid %d, tol %g", grid_per_dim, tol)
    else:
        log.warning(
            "falsifier: %d/%d/%d/%d violations (a/b/c/nonneg) at grid %d",
            len(cond_a), len(cond_b), len(cond_c), len(nonneg), grid_per_dim,
        )
    return report


def monte_carlo_safety(
    model: DynamicsModel,
    x0: np.ndarray,
    spec: SafetySpec,
    trials: int,
    seed: int,
) -> float:
    """Fraction of length-T rollouts from x0 that never hit the unsafe set."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if not bool(spec.domain.contains(x0[None, :])[0]):
        log.warning("monte carlo start %s lies outside the state space", x0.tolist())
    rng = np.random.default_rng(seed)
    states = np.tile(x0, (trials, 1))
    safe = np.ones(trials, dtype=bool)
    for _ in range(spec.horizon):
        states = model.evaluate(states)
        if np.any(model.noise_std > 0):
            states = states + rng.normal(0.0, model.noise_std, size=states.shape)
        safe &= ~spec.unsafe.contains(states)
    return float(np.mean(safe))
