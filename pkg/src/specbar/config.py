"""Configuration schema: parsing, validation, and serialization.

A run is described by a YAML or JSON document.  Unknown keys are rejected
so typos fail loudly rather than silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .data import Dataset, DynamicsModel, load_samples, parse_dynamics, sample_transitions
from .geometry import RectSet, RegionSet, SafetySpec, parse_region

__all__ = ["Configuration", "parse_config", "serialize_config", "config_from_dict"]

_DEFAULTS: dict[str, Any] = {
    "kernel": "GaussianKernel",
    "estimator": "KernelRidgeRegressor",
    "sigma_f": 1.0,
    "sigma_l": 1.0,
    "lambda": 1e-5,
    "set_scaling": 0.0,
    "num_frequencies": 6,
    "lattice_resolution": 300,
    "optimiser": "simplex",
    "time_horizon": 1,
    "epsilon": 0.0,
    "b_bar": None,
    "kappa": None,
    "seed": 42,
    "pad": 0.0,
    "noise_std": 0.0,
    "num_samples": 1000,
    "verify": False,
}

_ALL_KEYS = frozenset(_DEFAULTS) | {
    "x_samples",
    "xp_samples",
    "system_dynamics",
    "X_bounds",
    "X_init",
    "X_unsafe",
    "feature_sigma_l",
}

_KERNELS = ("GaussianKernel",)
_ESTIMATORS = ("KernelRidgeRegressor",)


def _require_number(raw: Any, key: str, minimum: Optional[float] = None, strict: bool = False) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ValueError(f"key {key!r} must be a number, got {type(raw).__name__}")
    value = float(raw)
    if minimum is not None and (value < minimum or (strict and value == minimum)):
        bound = ">" if strict else ">="
        raise ValueError(f"key {key!r} must be {bound} {minimum}")
    return value


def _require_int(raw: Any, key: str, minimum: int) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ValueError(f"key {key!r} must be an integer, got {type(raw).__name__}")
    if raw < minimum:
        raise ValueError(f"key {key!r} must be >= {minimum}")
    return int(raw)


def _per_dim(raw: Any, key: str, n: int) -> tuple:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        values = [float(raw)] * n
    elif isinstance(raw, (list, tuple)):
        if len(raw) != n:
            raise ValueError(f"key {key!r} needs {n} entries, got {len(raw)}")
        values = [_require_number(v, key) for v in raw]
    else:
        raise ValueError(f"key {key!r} must be a number or a list of numbers")
    for v in values:
        if v <= 0:
            raise ValueError(f"key {key!r} entries must be > 0")
    return tuple(values)


@dataclass(frozen=True)
class Configuration:
    """Validated run description."""

    domain: RectSet = field(compare=False)
    init: RegionSet = field(compare=False)
    unsafe: RegionSet = field(compare=False)
    x_samples: Optional[Any]
    xp_samples: Optional[Any]
    system_dynamics: Optional[tuple]
    noise_std: tuple
    num_samples: int
    kernel: str
    estimator: str
    sigma_f: float
    sigma_l: tuple
    lambda_: float
    set_scaling: float
    num_frequencies: int
    lattice_resolution: int
    feature_sigma_l: tuple
    optimiser: str
    time_horizon: int
    epsilon: float
    b_bar: Optional[float]
    kappa: Optional[float]
    seed: int
    pad: float
    verify: bool
    # canonical textual forms, used for round-trip serialization and equality
    bounds_text: str = ""
    init_text: Any = ""
    unsafe_text: Any = ""
    base_dir: Optional[str] = field(default=None, compare=False)

    @property
    def n_dims(self) -> int:
        return self.domain.dimension

    def safety_spec(self) -> SafetySpec:
        return SafetySpec(self.domain, self.init, self.unsafe, self.time_horizon)

    def dynamics_model(self) -> Optional[DynamicsModel]:
        if self.system_dynamics is None:
            return None
        return parse_dynamics(list(self.system_dynamics), list(self.noise_std))

    def resolve_dataset(self) -> Dataset:
        """Materialize transition data from samples or from the dynamics."""
        if self.x_samples is not None:
            data = load_samples(self.x_samples, self.xp_samples, self.base_dir)
        else:
            model = self.dynamics_model()
            data = sample_transitions(model, self.num_samples, self.domain, self.seed)
        if data.n_dims != self.n_dims:
            raise ValueError(
                f"samples have dimension {data.n_dims} but X_bounds has {self.n_dims}"
            )
        return data


def config_from_dict(raw: dict, base_dir: Union[str, Path, None] = None) -> Configuration:
    if not isinstance(raw, dict):
        raise ValueError("configuration document must be a mapping")
    unknown = sorted(set(raw) - _ALL_KEYS)
    if unknown:
        raise ValueError(f"unknown configuration key(s): {', '.join(unknown)}")
    for key in ("X_bounds", "X_init", "X_unsafe"):
        if key not in raw:
            raise ValueError(f"missing required key {key!r}")

    has_samples = "x_samples" in raw or "xp_samples" in raw
    has_dynamics = "system_dynamics" in raw
    if has_samples and ("x_samples" not in raw or "xp_samples" not in raw):
        raise ValueError("x_samples and xp_samples must be supplied together")
    if not has_samples and not has_dynamics:
        raise ValueError("configuration needs x_samples/xp_samples or system_dynamics")

    merged = dict(_DEFAULTS)
    merged.update(raw)

    domain = parse_region(merged["X_bounds"])
    if not isinstance(domain, RectSet):
        raise ValueError("X_bounds must be a single RectSet")
    n = domain.dimension
    init = parse_region(merged["X_init"])
    unsafe = parse_region(merged["X_unsafe"])
    if init.dimension != n or unsafe.dimension != n:
        raise ValueError("X_init and X_unsafe must match the X_bounds dimension")

    kernel = merged["kernel"]
    if kernel not in _KERNELS:
        raise ValueError(f"unknown kernel {kernel!r} (available: {', '.join(_KERNELS)})")
    estimator = merged["estimator"]
    if estimator not in _ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r} (available: {', '.join(_ESTIMATORS)})")

    sigma_f = _require_number(merged["sigma_f"], "sigma_f", 0.0, strict=True)
    sigma_l = _per_dim(merged["sigma_l"], "sigma_l", n)
    feature_sigma_l = _per_dim(merged.get("feature_sigma_l", merged["sigma_l"]), "feature_sigma_l", n)
    lam = _require_number(merged["lambda"], "lambda", 0.0)
    set_scaling = _require_number(merged["set_scaling"], "set_scaling", 0.0)
    num_frequencies = _require_int(merged["num_frequencies"], "num_frequencies", 2)
    lattice_resolution = _require_int(merged["lattice_resolution"], "lattice_resolution", 2)
    time_horizon = _require_int(merged["time_horizon"], "time_horizon", 1)
    epsilon = _require_number(merged["epsilon"], "epsilon", 0.0)
    seed = _require_int(merged["seed"], "seed", 0)
    pad = _require_number(merged["pad"], "pad", 0.0)
    num_samples = _require_int(merged["num_samples"], "num_samples", 1)

    b_bar = merged["b_bar"]
    kappa = merged["kappa"]
    if b_bar is not None:
        b_bar = _require_number(b_bar, "b_bar", 0.0, strict=True)
    if kappa is not None:
        kappa = _require_number(kappa, "kappa", sigma_f)
    if epsilon > 0 and (b_bar is None or kappa is None):
        raise ValueError("epsilon > 0 requires both b_bar and kappa")

    verify = merged["verify"]
    if not isinstance(verify, bool):
        raise ValueError("key 'verify' must be a boolean")

    system_dynamics = None
    if has_dynamics:
        exprs = merged["system_dynamics"]
        if not isinstance(exprs, (list, tuple)) or not all(isinstance(s, str) for s in exprs):
            raise ValueError("system_dynamics must be a list of expression strings")
        if len(exprs) != n:
            raise ValueError(f"system_dynamics needs {n} expressions, got {len(exprs)}")
        system_dynamics = tuple(exprs)

    noise_raw = merged["noise_std"]
    if isinstance(noise_raw, (int, float)) and not isinstance(noise_raw, bool):
        noise_std = (float(noise_raw),) * n
    elif isinstance(noise_raw, (list, tuple)) and len(noise_raw) == n:
        noise_std = tuple(_require_number(v, "noise_std", 0.0) for v in noise_raw)
    else:
        raise ValueError(f"noise_std must be a number or a list of {n} numbers")
    if any(v < 0 for v in noise_std):
        raise ValueError("noise_std entries must be >= 0")

    x_samples = merged.get("x_samples")
    xp_samples = merged.get("xp_samples")
    if x_samples is not None:
        for key, value in (("x_samples", x_samples), ("xp_samples", xp_samples)):
            if not isinstance(value, (str, list)):
                raise ValueError(f"key {key!r} must be a CSV path or an inline list of rows")

    optimiser = merged["optimiser"]
    if not isinstance(optimiser, str) or not optimiser:
        raise ValueError("key 'optimiser' must be a non-empty string")

    config = Configuration(
        domain=domain,
        init=init,
        unsafe=unsafe,
        x_samples=_freeze(x_samples),
        xp_samples=_freeze(xp_samples),
        system_dynamics=system_dynamics,
        noise_std=noise_std,
        num_samples=num_samples,
        kernel=kernel,
        estimator=estimator,
        sigma_f=sigma_f,
        sigma_l=sigma_l,
        lambda_=lam,
        set_scaling=set_scaling,
        num_frequencies=num_frequencies,
        lattice_resolution=lattice_resolution,
        feature_sigma_l=feature_sigma_l,
        optimiser=optimiser,
        time_horizon=time_horizon,
        epsilon=epsilon,
        b_bar=b_bar,
        kappa=kappa,
        seed=seed,
        pad=pad,
        verify=verify,
        bounds_text=str(merged["X_bounds"]),
        init_text=_freeze(merged["X_init"]),
        unsafe_text=_freeze(merged["X_unsafe"]),
        base_dir=str(base_dir) if base_dir is not None else None,
    )
    # eager parse so malformed dynamics fail at configuration time
    config.dynamics_model()
    return config


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _thaw(value):
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


def parse_config(text: str, fmt: str = "yaml", base_dir: Union[str, Path, None] = None) -> Configuration:
    """Parse a YAML or JSON configuration document."""
    if fmt not in ("yaml", "json"):
        raise ValueError(f"unsupported config format {fmt!r}")
    try:
        raw = json.loads(text) if fmt == "json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValueError(f"config syntax error: {exc}") from None
    return config_from_dict(raw, base_dir)


def config_to_dict(config: Configuration) -> dict:
    """Canonical plain-data form; reparses to an equal Configuration."""
    out: dict[str, Any] = {
        "X_bounds": config.bounds_text,
        "X_init": _thaw(config.init_text),
        "X_unsafe": _thaw(config.unsafe_text),
        "kernel": config.kernel,
        "estimator": config.estimator,
        "sigma_f": config.sigma_f,
        "sigma_l": list(config.sigma_l),
        "lambda": config.lambda_,
        "set_scaling": config.set_scaling,
        "num_frequencies": config.num_frequencies,
        "lattice_resolution": config.lattice_resolution,
        "feature_sigma_l": list(config.feature_sigma_l),
        "optimiser": config.optimiser,
        "time_horizon": config.time_horizon,
        "epsilon": config.epsilon,
        "seed": config.seed,
        "pad": config.pad,
        "verify": config.verify,
    }
    if config.b_bar is not None:
        out["b_bar"] = config.b_bar
    if config.kappa is not None:
        out["kappa"] = config.kappa
    if config.x_samples is not None:
        out["x_samples"] = _thaw(config.x_samples)
        out["xp_samples"] = _thaw(config.xp_samples)
    if config.system_dynamics is not None:
        out["system_dynamics"] = list(config.system_dynamics)
        out["noise_std"] = list(config.noise_std)
        out["num_samples"] = config.num_samples
    return out


def serialize_config(config: Configuration, fmt: str = "yaml") -> str:
    data = config_to_dict(config)
    if fmt == "json":
        return json.dumps(data, indent=2, sort_keys=True)
    if fmt == "yaml":
        return yaml.safe_dump(data, sort_keys=True)
    raise ValueError(f"unsupported config format {fmt!r}")
