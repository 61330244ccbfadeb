"""Named benchmark configurations shipped with the package."""

from __future__ import annotations

from importlib import resources

from ..config import Configuration, parse_config

__all__ = ["names", "load", "raw"]


def names() -> tuple[str, ...]:
    """Benchmark names in sorted order."""
    found = [
        entry.name[: -len(".yaml")]
        for entry in resources.files(__package__).iterdir()
        if entry.name.endswith(".yaml")
    ]
    return tuple(sorted(found))


def raw(name: str) -> str:
    """YAML text of a shipped benchmark."""
    if name not in names():
        raise KeyError(f"unknown benchmark {name!r}; shipped: {', '.join(names())}")
    return resources.files(__package__).joinpath(f"{name}.yaml").read_text()


def load(name: str) -> Configuration:
    return parse_config(raw(name), "yaml")
