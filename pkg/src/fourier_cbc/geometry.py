"""Domains, regions, the affine unit-cube map and periodic sampling lattices.

All point arrays are ``(m, n)`` float arrays (a single point may be passed as a
length-``n`` vector). Region membership is closed: boundary points are inside.

Region JSON schema::

    {"type": "box", "lower": [..], "upper": [..]}
    {"type": "ball", "center": [..], "radius": r}
    {"type": "union", "members": [<region>, ...]}
    {"type": "complement", "inner": <region>, "domain": {"lower": [..], "upper": [..]}}
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    pass


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


@dataclass(frozen=True)
class Domain:
    """Axis-aligned hyperrectangle ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise GeometryError("domain bounds must be equal-length nonempty vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise GeometryError("domain bounds must be finite")
        if np.any(lo >= hi):
            raise GeometryError(f"domain needs lower < upper on every axis, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 0.0) -> np.ndarray:
        x = _as_points(x)
        return np.all((x >= self.lower - atol) & (x <= self.upper + atol), axis=1)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        return cls(d["lower"], d["upper"])


def affine_map(x, domain: Domain) -> np.ndarray:
    """Map state coordinates onto the unit hypercube (no clipping)."""
    x = np.asarray(x, dtype=float)
    return (x - domain.lower) / domain.width


def affine_unmap(u, domain: Domain) -> np.ndarray:
    """Inverse of :func:`affine_map`."""
    u = np.asarray(u, dtype=float)
    return domain.lower + u * domain.width


def periodic_domain(domain: Domain, dilation) -> Domain:
    """Smallest box on which a basis with per-axis dilation ``dilation`` is periodic.

    Each unit-cube axis is stretched by ``2*pi/dilation[i]`` and mapped back, so
    the result contains ``domain`` iff every ``dilation[i] <= 2*pi``.
    """
    rho = np.asarray(dilation, dtype=float)
    if rho.shape != domain.lower.shape:
        raise GeometryError("dilation must have one entry per axis")
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        raise GeometryError(f"dilation must be positive, got {rho}")
    return Domain(domain.lower, domain.lower + domain.width * (TWO_PI / rho))


# --------------------------------------------------------------------------- regions


class Region:
    """Base class; subclasses implement ``contains`` and ``bbox``."""

    def contains(self, x) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:  # pragma: no cover - abstract
        raise NotImplementedError

    def to_dict(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def n(self) -> int:
        return self.bbox()[0].size


@dataclass(frozen=True, eq=False)
class Box(Region):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise GeometryError("box bounds must be equal-length vectors")
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(lo >= hi):
            raise GeometryError(f"empty or degenerate box {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, x) -> np.ndarray:
        x = _as_points(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def bbox(self):
        return self.lower.copy(), self.upper.copy()

    def to_dict(self):
        return {"type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Ball(Region):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if c.ndim != 1 or np.any(~np.isfinite(c)):
            raise GeometryError("ball center must be a finite vector")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise GeometryError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    def contains(self, x) -> np.ndarray:
        x = _as_points(x)
        return np.sum((x - self.center) ** 2, axis=1) <= self.radius**2

    def bbox(self):
        return self.center - self.radius, self.center + self.radius

    def to_dict(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Union(Region):
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise GeometryError("union needs at least one member")
        if not all(isinstance(m, Region) for m in members):
            raise GeometryError("union members must be regions")
        if len({m.n for m in members}) != 1:
            raise GeometryError("union members disagree on dimension")
        object.__setattr__(self, "members", members)

    def contains(self, x) -> np.ndarray:
        x = _as_points(x)
        out = np.zeros(x.shape[0], dtype=bool)
        for m in self.members:
            out |= m.contains(x)
        return out

    def bbox(self):
        boxes = [m.bbox() for m in self.members]
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def to_dict(self):
        return {"type": "union", "members": [m.to_dict() for m in self.members]}


@dataclass(frozen=True, eq=False)
class Complement(Region):
    """Points of ``domain`` that are not in ``inner``."""

    inner: Region
    domain: Domain

    def contains(self, x) -> np.ndarray:
        return self.domain.contains(x) & ~self.inner.contains(x)

    def bbox(self):
        return self.domain.lower.copy(), self.domain.upper.copy()

    def to_dict(self):
        return {"type": "complement", "inner": self.inner.to_dict(), "domain": self.domain.to_dict()}


def domain_region(domain: Domain) -> Box:
    return Box(domain.lower, domain.upper)


def region_from_dict(d: dict) -> Region:
    kind = d.get("type")
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "ball":
        return Ball(d["center"], d["radius"])
    if kind == "union":
        return Union(tuple(region_from_dict(m) for m in d["members"]))
    if kind == "complement":
        return Complement(region_from_dict(d["inner"]), Domain.from_dict(d["domain"]))
    raise GeometryError(f"unknown region type {kind!r}")


def _clip_box(lo, hi, clip: Domain | None):
    if clip is None:
        return lo, hi
    return np.maximum(lo, clip.lower), np.minimum(hi, clip.upper)


def inflate_region(region: Region, fraction: float, clip: Domain | None = None,
                   margin=0.0) -> Region:
    """Grow a region by a relative ``fraction`` plus an absolute ``margin``.

    Box half-widths and ball radii scale by ``1 + fraction`` and then grow by
    ``margin`` (per axis for boxes; balls use the largest entry). Unions
    inflate memberwise; a complement inflates by shrinking its excluded part.
    Boxes are clipped to ``clip`` when given (balls are left as is; lattice
    filtering never sees points outside the lattice domain anyway).
    """
    if fraction < 0:
        raise GeometryError("inflation fraction must be nonnegative")
    margin = np.asarray(margin, dtype=float)
    if np.any(margin < 0):
        raise GeometryError("inflation margin must be nonnegative")
    if isinstance(region, Box):
        mid = 0.5 * (region.lower + region.upper)
        half = 0.5 * (region.upper - region.lower) * (1.0 + fraction) + margin
        lo, hi = _clip_box(mid - half, mid + half, clip)
        return Box(lo, hi)
    if isinstance(region, Ball):
        return Ball(region.center, region.radius * (1.0 + fraction) + float(margin.max(initial=0.0)))
    if isinstance(region, Union):
        return Union(tuple(inflate_region(m, fraction, clip, margin) for m in region.members))
    if isinstance(region, Complement):
        return Complement(_deflate(region.inner, fraction, margin), region.domain)
    raise GeometryError(f"cannot inflate {type(region).__name__}")


def _deflate(region: Region, fraction: float, margin) -> Region:
    scale = 1.0 / (1.0 + fraction)
    if isinstance(region, Box):
        mid = 0.5 * (region.lower + region.upper)
        half = np.maximum(0.5 * (region.upper - region.lower) * scale - margin, 0.0)
        return Box(mid - half, mid + half)
    if isinstance(region, Ball):
        return Ball(region.center, max(region.radius * scale - float(margin.max(initial=0.0)), 1e-12))
    if isinstance(region, Union):
        return Union(tuple(_deflate(m, fraction, margin) for m in region.members))
    if isinstance(region, Complement):
        return Complement(inflate_region(region.inner, fraction, None, margin), region.domain)
    raise GeometryError(f"cannot deflate {type(region).__name__}")


# --------------------------------------------------------------------------- lattices


@dataclass(frozen=True)
class Lattice:
    """Half-open equispaced product grid over a periodic domain.

    ``points[k]`` has multi-index ``np.unravel_index(k, (Q,)*n)`` (row-major,
    last axis fastest) and normalized phase ``2*pi*l/Q`` on every axis.
    """

    points: np.ndarray
    resolution: int
    domain: Domain  # the periodic domain X~
    base: Domain  # the state domain X used by the affine map
    dilation: np.ndarray

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.n

    def axis_points(self, i: int) -> np.ndarray:
        l = np.arange(self.resolution)
        return self.base.lower[i] + self.base.width[i] * TWO_PI * l / (self.resolution * self.dilation[i])

    def phases(self) -> np.ndarray:
        """Per-axis phase ``2*pi*l/Q`` of each lattice point, ``(size, n)``."""
        idx = np.indices(self.shape).reshape(self.n, -1).T
        return TWO_PI * idx / self.resolution


DEFAULT_MAX_LATTICE_POINTS = 4_000_000


def product_lattice(base: Domain, dilation, resolution: int,
                    max_points: int = DEFAULT_MAX_LATTICE_POINTS) -> Lattice:
    rho = np.asarray(dilation, dtype=float)
    n = base.n
    if resolution < 1:
        raise GeometryError("lattice resolution must be positive")
    if float(resolution) ** n > max_points:
        raise GeometryError(
            f"lattice of {resolution}^{n} points exceeds the budget of {max_points}")
    per = periodic_domain(base, rho)
    axes = [base.lower[i] + base.width[i] * TWO_PI * np.arange(resolution) / (resolution * rho[i])
            for i in range(n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    return Lattice(points=grid, resolution=int(resolution), domain=per, base=base, dilation=rho)


def build_lattice(basis, oversample: int, max_points: int = DEFAULT_MAX_LATTICE_POINTS) -> Lattice:
    """Lattice with ``oversample*(2*f_max+1)`` points per axis on the basis' periodic domain."""
    if int(oversample) != oversample or oversample < 1:
        raise GeometryError("oversample must be a positive integer")
    q = int(oversample) * (2 * basis.f_max + 1)
    return product_lattice(basis.domain, basis.dilation, q, max_points)


def filter_lattice(lattice: Lattice, region: Region, periodic: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Split lattice indices into (inside region, outside region).

    With ``periodic`` a point counts as inside when any of its images shifted
    by at most one period per axis lies in the region, so regions reaching
    past the edge of the periodic domain wrap around.
    """
    mask = region.contains(lattice.points)
    if periodic:
        period = lattice.domain.width
        for shift in itertools.product((-1, 0, 1), repeat=lattice.domain.n):
            if any(shift):
                mask |= region.contains(lattice.points + np.asarray(shift) * period)
    idx = np.arange(lattice.size)
    return idx[mask], idx[~mask]


def uniform_grid(lower, upper, counts: Sequence[int] | int) -> np.ndarray:
    """Closed product grid (endpoints included), row-major."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = lower.size
    if np.isscalar(counts):
        counts = [int(counts)] * n
    axes = [np.linspace(lower[i], upper[i], max(int(counts[i]), 1)) if counts[i] > 1
            else np.array([0.5 * (lower[i] + upper[i])]) for i in range(n)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)


def region_grid(region: Region, spacing, within: Domain | None = None) -> np.ndarray:
    """Grid points of ``region`` at (at most) the given per-axis spacing."""
    lo, hi = region.bbox()
    if within is not None:
        lo, hi = _clip_box(lo, hi, within)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), lo.shape)
    counts = [int(math.ceil((hi[i] - lo[i]) / spacing[i])) + 1 for i in range(lo.size)]
    pts = uniform_grid(lo, hi, counts)
    return pts[region.contains(pts)]
