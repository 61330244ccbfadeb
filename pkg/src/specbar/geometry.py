"""Sets, the unit-cube transform, and torus lattices.

State-space regions are rectangles, spheres (given by squared radius), or
finite unions of either.  An affine transform maps the padded bounding box
of the state space onto [0, 1]^n; the synthesis lattice is the regular
periodic grid {i/Q : i < Q}^n in those coordinates, with each point
classified against the (optionally enlarged) regions.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "RectSet",
    "SphereSet",
    "MultiSet",
    "RegionSet",
    "SafetySpec",
    "UnitTransform",
    "Lattice",
    "parse_region",
    "scale_set",
    "enlarge_set",
    "unit_transform",
    "build_lattice",
]


def _as_vector(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty 1-D coordinate vector")
    return arr


@dataclass(frozen=True, eq=False)
class RectSet:
    """Axis-aligned box [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        lo, hi = _as_vector(lower), _as_vector(upper)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must share dimension")
        if np.any(lo > hi):
            raise ValueError("RectSet requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dimension(self) -> int:
        return self.lower.size

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _check_dim(self, pts)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower.copy(), self.upper.copy()

    def scaled(self, fraction: float) -> "RectSet":
        center = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * (1.0 + fraction)
        return RectSet(center - half, center + half)

    def enlarged(self, margins: np.ndarray) -> "RectSet":
        return RectSet(self.lower - margins, self.upper + margins)

    def __repr__(self) -> str:
        return f"RectSet({self.lower.tolist()}, {self.upper.tolist()})"


@dataclass(frozen=True, eq=False)
class SphereSet:
    """Closed ball given by its center and squared radius."""

    center: np.ndarray
    radius_sq: float

    def __init__(self, center: Sequence[float], radius_sq: float):
        c = _as_vector(center)
        r2 = float(radius_sq)
        if r2 <= 0.0:
            raise ValueError("SphereSet requires radius_sq > 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius_sq", r2)

    @property
    def dimension(self) -> int:
        return self.center.size

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _check_dim(self, pts)
        delta = pts - self.center
        return np.einsum("ij,ij->i", delta, delta) <= self.radius_sq

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.sqrt(self.radius_sq)
        return self.center - r, self.center + r

    def scaled(self, fraction: float) -> "SphereSet":
        # radius scales by (1+f), so the squared radius picks up (1+f)^2
        return SphereSet(self.center, self.radius_sq * (1.0 + fraction) ** 2)

    def enlarged(self, margins: np.ndarray) -> "SphereSet":
        # max over the per-axis margins keeps this a superset of the true
        # anisotropic Minkowski sum (exact when margins are isotropic)
        r = np.sqrt(self.radius_sq) + float(np.max(margins))
        return SphereSet(self.center, r * r)

    def __repr__(self) -> str:
        return f"SphereSet({self.center.tolist()}, {self.radius_sq})"


@dataclass(frozen=True, eq=False)
class MultiSet:
    """Finite union of regions."""

    members: tuple

    def __init__(self, members: Sequence[Union["RectSet", "SphereSet", "MultiSet"]]):
        flat: list = []
        for m in members:
            if isinstance(m, MultiSet):
                flat.extend(m.members)
            else:
                flat.append(m)
        if not flat:
            raise ValueError("MultiSet requires at least one member")
        dims = {m.dimension for m in flat}
        if len(dims) != 1:
            raise ValueError("MultiSet members must share dimension")
        object.__setattr__(self, "members", tuple(flat))

    @property
    def dimension(self) -> int:
        return self.members[0].dimension

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        hit = np.zeros(pts.shape[0], dtype=bool)
        for m in self.members:
            hit |= m.contains(pts)
        return hit

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        boxes = [m.bounding_box() for m in self.members]
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        return lo, hi

    def scaled(self, fraction: float) -> "MultiSet":
        return MultiSet([m.scaled(fraction) for m in self.members])

    def enlarged(self, margins: np.ndarray) -> "MultiSet":
        return MultiSet([m.enlarged(margins) for m in self.members])

    def __repr__(self) -> str:
        return f"MultiSet({list(self.members)!r})"


RegionSet = Union[RectSet, SphereSet, MultiSet]


def _check_dim(region: RegionSet, pts: np.ndarray) -> None:
    if pts.ndim != 2 or pts.shape[1] != region.dimension:
        raise ValueError(
            f"point dimension {pts.shape[-1]} does not match set dimension {region.dimension}"
        )


def contains(region: RegionSet, point: Sequence[float]) -> bool:
    """Closed-set membership for a single point."""
    return bool(region.contains(np.atleast_2d(np.asarray(point, dtype=float)))[0])


def scale_set(region: RegionSet, fraction: float) -> RegionSet:
    """Dilate a region about its own center(s) by (1 + fraction) per half-width."""
    if fraction < 0:
        raise ValueError("scaling fraction must be >= 0")
    return region.scaled(float(fraction))


def enlarge_set(region: RegionSet, margins: Sequence[float]) -> RegionSet:
    """Grow a region outward by an absolute margin per dimension.

    Margins are in state units.  Rectangles gain the margin on every face;
    spheres grow their radius by the largest margin so the result stays a
    superset whatever the aspect ratio.
    """
    m = np.asarray(margins, dtype=float)
    if m.shape != (region.dimension,):
        raise ValueError("margins must provide one value per dimension")
    if np.any(m < 0):
        raise ValueError("margins must be >= 0")
    return region.enlarged(m)


_REGION_RE = re.compile(r"^\s*(RectSet|SphereSet)\s*\((.*)\)\s*$", re.DOTALL)


def parse_region(source: Union[str, Sequence]) -> RegionSet:
    """Parse ``RectSet([...], [...])`` / ``SphereSet([...], r_sq)`` strings.

    A list of such strings (or of already-parsed regions) becomes a union.
    """
    if isinstance(source, (RectSet, SphereSet, MultiSet)):
        return source
    if isinstance(source, (list, tuple)):
        return MultiSet([parse_region(item) for item in source])
    if not isinstance(source, str):
        raise ValueError(f"cannot parse region from {type(source).__name__}")
    match = _REGION_RE.match(source)
    if match is None:
        raise ValueError(f"unrecognized set syntax: {source!r}")
    kind, args_text = match.groups()
    try:
        args = ast.literal_eval(f"({args_text},)")
    except (ValueError, SyntaxError) as exc:
        raise ValueError(f"invalid arguments in {source!r}: {exc}") from None
    if kind == "RectSet":
        if len(args) != 2:
            raise ValueError(f"RectSet expects two argument lists: {source!r}")
        return RectSet(args[0], args[1])
    if len(args) != 2:
        raise ValueError(f"SphereSet expects a center list and a radius: {source!r}")
    return SphereSet(args[0], args[1])


@dataclass(frozen=True, eq=False)
class SafetySpec:
    """State space, initial set, unsafe set, and the time horizon."""

    domain: RectSet
    init: RegionSet
    unsafe: RegionSet
    horizon: int

    def __post_init__(self):
        n = self.domain.dimension
        if self.init.dimension != n or self.unsafe.dimension != n:
            raise ValueError("safety spec sets must share the domain dimension")
        if self.horizon < 1:
            raise ValueError("time horizon must be a positive integer")


@dataclass(frozen=True, eq=False)
class UnitTransform:
    """Affine map P(x) = scale * x + offset onto [0,1]^n."""

    scale: np.ndarray
    offset: np.ndarray

    @property
    def dimension(self) -> int:
        return self.scale.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.scale + self.offset

    def invert(self, u: np.ndarray) -> np.ndarray:
        return (np.asarray(u, dtype=float) - self.offset) / self.scale


def unit_transform(bounds: RectSet, pad: float = 0.0) -> UnitTransform:
    """Transform mapping the padded box onto the unit cube.

    Padding widens the box by ``pad * width`` on each side before
    normalizing, so opposite faces of the original domain do not touch
    through the torus seam.
    """
    if not isinstance(bounds, RectSet):
        raise ValueError("unit_transform requires rectangular bounds")
    if pad < 0:
        raise ValueError("pad must be >= 0")
    width = bounds.upper - bounds.lower
    if np.any(width <= 0):
        raise ValueError("degenerate bounds: zero width dimension")
    lo = bounds.lower - pad * width
    total = width * (1.0 + 2.0 * pad)
    scale = 1.0 / total
    return UnitTransform(scale=scale, offset=-lo * scale)


@dataclass(frozen=True, eq=False)
class Lattice:
    """Regular periodic grid in torus coordinates with set classifications.

    ``points`` has shape (Q^n, n) with coordinates i/Q.  Index arrays hold
    the lattice points inside the (enlarged) init / unsafe / domain sets and
    their complements; classification happens in state coordinates through
    the inverse transform.
    """

    dimension: int
    points_per_dim: int
    points: np.ndarray
    transform: UnitTransform
    in_init: np.ndarray
    in_unsafe: np.ndarray
    in_domain: np.ndarray
    out_init: np.ndarray
    out_unsafe: np.ndarray
    out_domain: np.ndarray

    @property
    def size(self) -> int:
        return self.points.shape[0]


def _grid_points(q: int, n: int) -> np.ndarray:
    axis = np.arange(q, dtype=float) / q
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def build_lattice(q: int, spec: SafetySpec, transform: UnitTransform, scaling: float = 0.0) -> Lattice:
    """Build the Q^n torus lattice and classify points against enlarged sets.

    ``scaling`` is measured against the periodic space: every set gains an
    absolute margin of ``scaling/4`` torus units per side (converted to
    state units per dimension) before classification.  The quarter keeps
    the grown init and unsafe sets from closing the corridor between them
    on the benchmark geometries while still clearing a multi-cell gap to
    their complements, which is what drives the A coefficients down.
    """
    if q < 2:
        raise ValueError("lattice needs at least 2 points per dimension")
    if scaling < 0:
        raise ValueError("scaling fraction must be >= 0")
    n = spec.domain.dimension
    pts = _grid_points(int(q), n)
    state = transform.invert(pts)
    margins = 0.25 * scaling / transform.scale

    def split(region: RegionSet, name: str) -> tuple[np.ndarray, np.ndarray]:
        mask = enlarge_set(region, margins).contains(state)
        inside = np.flatnonzero(mask)
        if inside.size == 0:
            raise ValueError(
                f"lattice too coarse: no lattice point falls inside the {name} set; "
                f"increase lattice_resolution or set_scaling"
            )
        return inside, np.flatnonzero(~mask)

    in0, out0 = split(spec.init, "initial")
    inu, outu = split(spec.unsafe, "unsafe")
    inx, outx = split(spec.domain, "state")
    return Lattice(
        dimension=n,
        points_per_dim=int(q),
        points=pts,
        transform=transform,
        in_init=in0,
        in_unsafe=inu,
        in_domain=inx,
        out_init=out0,
        out_unsafe=outu,
        out_domain=outx,
    )
