"""Sampling-based bounds for trigonometric polynomials.

A real trigonometric polynomial ``B`` of per-axis degree ``f`` is reproduced
from its values on a periodic lattice of ``Q >= 2f+1`` points per axis by

    B(x) = (1/N) sum_{xbar} B(xbar) D(x - xbar),

with ``D`` the de la Vallee Poussin kernel, ``a = f``, ``b = Q - f``. Its
lattice mean is 1 and its mean absolute value is at most
``C = (1 - 2f/Q)^(-n/2)``.

Local bound. Let ``S'`` be a region, ``[lo_in, hi_in]`` an interval holding
``B`` on the lattice points in ``S'`` and ``[lo_out, hi_out]`` one holding it
on the rest. Write ``mid``/``half`` for the centre and half-width of the
inside interval, ``e_hi = max(0, hi_out - hi_in)`` and
``e_lo = max(0, lo_in - lo_out)``. Subtracting ``mid`` with the mean-one
property and splitting ``D`` into its positive and negative parts gives, for
every ``x`` in ``S``::

    mid - C*half - max_x (P e_lo + N e_hi) <= B(x) <= mid + C*half + max_x (P e_hi + N e_lo),

where ``P(x) = (1/N) sum_{xbar outside S'} D^+(x - xbar)`` and ``N(x)`` the
same sum of ``D^-``. Any bounds ``P <= A_pos``, ``N <= A_neg`` and
``P + N <= A`` on ``S`` turn the excess terms into the largest of two linear
forms in ``(e_hi, e_lo)`` (see :func:`excess_weights`); with ``A_pos = A_neg
= A`` this reduces to ``A * max(e_hi, e_lo)``. The intervals need not be tight, which is what
lets the LP carry them as free variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Lattice, Region

SINGULAR_THRESHOLD = 1e-7
ZERO_A = 1e-13


class BoundsError(ValueError):
    pass


def c_coefficient(f_max: int, q: int, n: int) -> float:
    """Global tightening coefficient ``(1 - 2 f_max / q)^(-n/2)``."""
    if f_max < 0 or n < 1:
        raise BoundsError("f_max must be >= 0 and n >= 1")
    if q < 2 * f_max + 1:
        raise BoundsError(f"lattice resolution {q} below the Nyquist minimum {2 * f_max + 1}")
    return (1.0 - 2.0 * f_max / q) ** (-0.5 * n)


def vallee_poussin_1d(z, a: int, b: int) -> np.ndarray:
    """One-axis factor ``sin((b+a)z/2) sin((b-a)z/2) / ((b-a) sin^2(z/2))``."""
    if not (b > a >= 0):
        raise BoundsError("need b > a >= 0")
    z = np.asarray(z, dtype=float)
    s_half = np.sin(0.5 * z)
    near = np.abs(s_half) < SINGULAR_THRESHOLD
    safe = np.where(near, 1.0, s_half)
    val = np.sin(0.5 * (b + a) * z) * np.sin(0.5 * (b - a) * z) / ((b - a) * safe**2)
    if np.any(near):
        t = np.remainder(z + math.pi, 2.0 * math.pi) - math.pi
        ser = (b + a) * (1.0 + t**2 * (2.0 - (b + a) ** 2 - (b - a) ** 2) / 24.0)
        val = np.where(near, ser, val)
    return val


def vallee_poussin(z, a: int, b: int) -> np.ndarray | float:
    """Tensor-product kernel; ``z`` has shape (..., n) (a scalar is 1-D)."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        return float(vallee_poussin_1d(z, a, b))
    out = np.prod(vallee_poussin_1d(z, a, b), axis=-1)
    return float(out) if out.ndim == 0 else out


def lattice_phase_offsets(points: np.ndarray, lattice: Lattice) -> list[np.ndarray]:
    """Per-axis phase differences ``z_i = 2 pi (x_i - xbar_i) / period_i``.

    Returns a list of (len(points), Q) arrays, one per axis.
    """
    period = lattice.domain.width
    out = []
    for i in range(lattice.n):
        grid = lattice.axis_points(i)
        out.append(2.0 * math.pi * (points[:, i, None] - grid[None, :]) / period[i])
    return out


def lebesgue_sum(points, lattice: Lattice, f_max: int) -> np.ndarray:
    """``(1/N) sum_{xbar in lattice} |D(x - xbar)|`` at each point (separable)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    q = lattice.resolution
    total = np.ones(points.shape[0])
    for z in lattice_phase_offsets(points, lattice):
        total *= np.abs(vallee_poussin_1d(z, f_max, q - f_max)).sum(axis=1) / q
    return total


@dataclass(frozen=True)
class SearchConfig:
    """Settings for the sup search behind the local coefficient.

    Attributes
    ----------
    refine : int
        Candidate grid spacing is the lattice spacing divided by ``refine``.
    polish_rounds : int
        Coordinate-descent sweeps applied to the best candidates.
    polish_starts : int
        Number of best candidates that get polished.
    safety_factor : float
        Multiplier on the best value found, covering the finite search.
    max_candidates : int
        Cap on candidate-grid size; ``refine`` is lowered to respect it.
    """

    refine: int = 8
    polish_rounds: int = 12
    polish_starts: int = 8
    safety_factor: float = 1.05
    max_candidates: int = 2_000_000

    def __post_init__(self):
        if self.refine < 1 or self.polish_rounds < 0 or self.polish_starts < 0:
            raise BoundsError("invalid search configuration")
        if self.safety_factor < 1.0:
            raise BoundsError("safety factor must be >= 1")


def _axis_factors(points_1d: np.ndarray, lattice: Lattice, axis: int, f_max: int) -> np.ndarray:
    q = lattice.resolution
    z = 2.0 * math.pi * (points_1d[:, None] - lattice.axis_points(axis)[None, :]) / lattice.domain.width[axis]
    return vallee_poussin_1d(z, f_max, q - f_max) / q


def _contract(mask: np.ndarray, factors: list[np.ndarray]) -> np.ndarray:
    """``sum_{xbar in mask} prod_i factors[i][x_i, xbar_i]`` on the product grid."""
    t = mask.astype(float)
    for i in reversed(range(len(factors))):
        # tensordot appends the candidate axis; move it back into place
        t = np.moveaxis(np.tensordot(t, factors[i], axes=([i], [1])), -1, i)
    return t


def _outside_masses_grid(axes: list[np.ndarray], lattice: Lattice, mask: np.ndarray,
                         f_max: int) -> dict[str, np.ndarray]:
    """Absolute, positive-part and negative-part outside masses on a product grid.

    ``D^+ = (|D| + D)/2`` and ``D^- = (|D| - D)/2`` with both ``|D|`` and ``D``
    separable, so two tensor contractions give all three.
    """
    signed = [_axis_factors(ax, lattice, i, f_max) for i, ax in enumerate(axes)]
    absolute = _contract(mask, [np.abs(f) for f in signed])
    net = _contract(mask, signed)
    return {"abs": absolute, "pos": 0.5 * (absolute + net), "neg": 0.5 * (absolute - net)}


def _outside_masses_points(points: np.ndarray, lattice: Lattice, mask: np.ndarray,
                           f_max: int) -> dict[str, np.ndarray]:
    absolute = np.empty(points.shape[0])
    net = np.empty(points.shape[0])
    for p in range(points.shape[0]):
        ta = tn = mask.astype(float)
        for i in reversed(range(lattice.n)):
            f = _axis_factors(points[p, i:i + 1], lattice, i, f_max)[0]
            ta = ta @ np.abs(f)
            tn = tn @ f
        absolute[p], net[p] = float(ta), float(tn)
    return {"abs": absolute, "pos": 0.5 * (absolute + net), "neg": 0.5 * (absolute - net)}


def _polish(x: np.ndarray, fx: float, kind: str, step: np.ndarray, lo, hi, region: Region,
            lattice: Lattice, mask: np.ndarray, f_max: int, rounds: int) -> float:
    for _ in range(rounds):
        for i in range(lattice.n):
            trial = np.repeat(x[None, :], 9, axis=0)
            trial[:, i] = np.clip(x[i] + np.linspace(-1.0, 1.0, 9) * step[i], lo[i], hi[i])
            ok = region.contains(trial)
            if not np.any(ok):
                continue
            tv = _outside_masses_points(trial[ok], lattice, mask, f_max)[kind]
            j = int(np.argmax(tv))
            if tv[j] > fx:
                fx = float(tv[j])
                x = trial[ok][j]
        step = step * 0.5
    return fx


def local_coefficients(lattice: Lattice, outside_indices, f_max: int, region: Region,
                       search: SearchConfig | None = None) -> dict[str, float]:
    """Upper estimates of the sup over ``region`` of the outside kernel masses.

    Returns ``{"abs": A, "pos": A_pos, "neg": A_neg}`` where ``A`` bounds
    ``(1/N) sum_{outside} |D(x - xbar)|`` and ``A_pos``/``A_neg`` the sums of
    the positive and negative parts of ``D``. Each sup is searched on a
    product grid over the region's bounding box (clipped to the lattice
    domain), the best candidates are polished by coordinate descent, and the
    result is multiplied by ``search.safety_factor``.
    """
    search = search or SearchConfig()
    zero = {"abs": 0.0, "pos": 0.0, "neg": 0.0}
    if lattice.size == 0:
        raise BoundsError("empty lattice")
    outside = np.asarray(outside_indices, dtype=int).ravel()
    if outside.size == 0:
        return zero
    if region is None:
        raise BoundsError("a region is needed to search for the supremum")
    mask = np.zeros(lattice.size, dtype=bool)
    mask[outside] = True
    mask = mask.reshape(lattice.shape)

    lo, hi = region.bbox()
    lo = np.maximum(lo, lattice.domain.lower)
    hi = np.minimum(hi, lattice.domain.upper)
    if np.any(lo > hi):
        return zero
    q = lattice.resolution
    spacing = lattice.domain.width / q
    refine = search.refine
    while True:
        counts = [max(2, int(math.ceil((hi[i] - lo[i]) / spacing[i] * refine)) + 1) for i in range(lattice.n)]
        if np.prod(np.asarray(counts, dtype=float)) <= search.max_candidates or refine == 1:
            break
        refine = max(1, refine // 2)
    axes = [np.linspace(lo[i], hi[i], counts[i]) for i in range(lattice.n)]
    masses = _outside_masses_grid(axes, lattice, mask, f_max)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lattice.n)
    inside = region.contains(grid)
    if not np.any(inside):
        return zero
    out = {}
    for kind, mass in masses.items():
        vals = np.where(inside, mass.ravel(), -np.inf)
        best = float(vals.max())
        if search.polish_rounds and search.polish_starts:
            for k in np.argsort(vals)[::-1][: search.polish_starts]:
                if np.isfinite(vals[k]):
                    best = max(best, _polish(grid[k].copy(), float(vals[k]), kind, spacing / refine,
                                             lo, hi, region, lattice, mask, f_max, search.polish_rounds))
        out[kind] = max(best, 0.0) * search.safety_factor
    return out


def a_coefficient(lattice: Lattice, outside_indices, f_max: int, q: int | None = None,
                  search: SearchConfig | None = None, region: Region | None = None) -> float:
    """Upper estimate of ``sup_{x in region} (1/N) sum_{outside} |D(x - xbar)|``.

    The absolute value makes the estimate also bound the signed sum. See
    :func:`local_coefficients` for the search.
    """
    if q is not None and int(q) != lattice.resolution:
        raise BoundsError("q does not match the lattice resolution")
    return local_coefficients(lattice, outside_indices, f_max, region, search)["abs"]


def outside_mass(points, lattice: Lattice, outside_indices, f_max: int, kind: str = "abs") -> np.ndarray:
    """Exact outside mass (``kind`` is ``abs``, ``pos`` or ``neg``) at arbitrary points."""
    mask = np.zeros(lattice.size, dtype=bool)
    mask[np.asarray(outside_indices, dtype=int)] = True
    return _outside_masses_points(np.atleast_2d(np.asarray(points, dtype=float)), lattice,
                                  mask.reshape(lattice.shape), f_max)[kind]


def excess_weights(A: float, A_pos: float | None = None, A_neg: float | None = None) -> list[tuple[float, float]]:
    """Vertices ``(p, n)`` of ``{0 <= p <= A_pos, 0 <= n <= A_neg, p + n <= A}``.

    Only the vertices that can maximize ``p*e1 + n*e2`` for nonnegative
    ``e`` are returned; the excess term of the local bound is the largest of
    these linear forms. Missing split coefficients default to ``A``.
    """
    A = 0.0 if A <= ZERO_A else float(A)
    p = A if A_pos is None else min(float(A_pos), A)
    q = A if A_neg is None else min(float(A_neg), A)
    p, q = max(p, 0.0), max(q, 0.0)
    if p + q <= A:
        return [(p, q)]
    return [(p, A - p), (A - q, q)]


def local_bounds(values_inside, values_outside, C: float, A: float,
                 A_pos: float | None = None, A_neg: float | None = None) -> tuple[float, float]:
    """Interval holding ``B`` on a region from lattice extremes.

    Parameters
    ----------
    values_inside : (lo_in, hi_in)
        Bounds of ``B`` on lattice points of the (inflated) region.
    values_outside : (lo_out, hi_out)
        Bounds on the remaining lattice points (ignored when ``A == 0``).
    C : float
        Global tightening coefficient.
    A, A_pos, A_neg : float
        Local coefficients for ``|D|`` and for the positive and negative
        parts of ``D``; the split ones default to ``A``.
    """
    lo_in, hi_in = map(float, values_inside)
    if lo_in > hi_in:
        raise BoundsError("inconsistent extremes: min exceeds max")
    mid = 0.5 * (hi_in + lo_in)
    half = 0.5 * (hi_in - lo_in)
    up = down = 0.0
    weights = excess_weights(A, A_pos, A_neg)
    if A > ZERO_A:
        lo_out, hi_out = map(float, values_outside)
        if lo_out > hi_out:
            raise BoundsError("inconsistent outside extremes")
        e_hi = max(0.0, hi_out - hi_in)
        e_lo = max(0.0, lo_in - lo_out)
        up = max(p * e_hi + q * e_lo for p, q in weights)
        down = max(p * e_lo + q * e_hi for p, q in weights)
    return mid - C * half - down, mid + C * half + up


@dataclass(frozen=True)
class TighteningCoefficients:
    """``C`` plus local coefficients per region label.

    ``A_map`` holds the absolute-kernel coefficient; ``A_pos_map`` and
    ``A_neg_map`` the positive- and negative-part ones. A label missing from
    the split maps falls back to its ``A_map`` value, which is always sound.
    """

    C: float
    A_map: dict = field(default_factory=dict)
    f_max: int = 0
    resolution: int = 1
    n: int = 1
    A_pos_map: dict = field(default_factory=dict)
    A_neg_map: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.C < 1.0 - 1e-15:
            raise BoundsError(f"C must be >= 1, got {self.C}")
        for maps in (self.A_map, self.A_pos_map, self.A_neg_map):
            for label, a in maps.items():
                if a < 0:
                    raise BoundsError(f"negative local coefficient for {label}")
        for label, a in self.A_map.items():
            denom = self.C - 2.0 * a + 1.0
            if denom <= 0:
                raise BoundsError(
                    f"tightening denominator C - 2A + 1 = {denom:.3g} <= 0 for region {label!r} "
                    f"(A = {a:.4g}); increase the inflation or the lattice resolution")

    @staticmethod
    def _get(maps, label):
        for m in maps:
            if label in m:
                a = float(m[label])
                return 0.0 if a <= ZERO_A else a
        return 0.0

    def A(self, label: str) -> float:
        return self._get((self.A_map,), label)

    def A_pos(self, label: str) -> float:
        return self._get((self.A_pos_map, self.A_map), label)

    def A_neg(self, label: str) -> float:
        return self._get((self.A_neg_map, self.A_map), label)

    def weights(self, label: str) -> list[tuple[float, float]]:
        """Excess weights ``(p, n)`` for ``label`` (see :func:`excess_weights`)."""
        return excess_weights(self.A(label), self.A_pos(label), self.A_neg(label))

    def to_dict(self) -> dict:
        return {"C": self.C, "A": dict(self.A_map), "A_pos": dict(self.A_pos_map),
                "A_neg": dict(self.A_neg_map), "f_max": self.f_max,
                "resolution": self.resolution, "n": self.n}

    @classmethod
    def from_dict(cls, d: dict) -> "TighteningCoefficients":
        def fl(m):
            return {k: float(v) for k, v in m.items()}
        return cls(float(d["C"]), fl(d["A"]), int(d["f_max"]), int(d["resolution"]), int(d["n"]),
                   fl(d.get("A_pos", {})), fl(d.get("A_neg", {})))
