"""Data-driven barrier certificate synthesis for stochastic systems."""

__version__ = "0.1.0"

from . import benchmarks
from .certify import (
    BarrierCertificate,
    FalsificationReport,
    SynthesisResult,
    barrier_grid,
    falsify,
    monte_carlo_safety,
    result_json,
    synthesize,
)
from .config import Configuration, config_from_dict, parse_config, serialize_config
from .data import Dataset, DynamicsModel, parse_dynamics, sample_transitions
from .estimator import FittedEstimator, KernelParams, fit
from .geometry import (
    Lattice,
    MultiSet,
    RectSet,
    SafetySpec,
    SphereSet,
    build_lattice,
    enlarge_set,
    parse_region,
    scale_set,
    unit_transform,
)
from .relaxation import assemble_lp, coefficient_A, coefficient_C
from .solve import LPSolution, export_lp, solve_lp
from .spectral import FeatureMap, build_feature_map, spectral_weights, transition_matrix
from .tuner import TunerReport, grid_search, lbfgs_tune, median_heuristic

__all__ = [
    "__version__",
    "benchmarks",
    "BarrierCertificate",
    "FalsificationReport",
    "SynthesisResult",
    "barrier_grid",
    "falsify",
    "monte_carlo_safety",
    "result_json",
    "synthesize",
    "Configuration",
    "config_from_dict",
    "parse_config",
    "serialize_config",
    "Dataset",
    "DynamicsModel",
    "parse_dynamics",
    "sample_transitions",
    "FittedEstimator",
    "KernelParams",
    "fit",
    "Lattice",
    "MultiSet",
    "RectSet",
    "SafetySpec",
    "SphereSet",
    "build_lattice",
    "enlarge_set",
    "parse_region",
    "scale_set",
    "unit_transform",
    "assemble_lp",
    "coefficient_A",
    "coefficient_C",
    "LPSolution",
    "export_lp",
    "solve_lp",
    "FeatureMap",
    "build_feature_map",
    "spectral_weights",
    "transition_matrix",
    "TunerReport",
    "grid_search",
    "lbfgs_tune",
    "median_heuristic",
]
