"""Finite linear program for the barrier coefficients.

Constraint families (``S'`` is the inflated region, ``v`` the family's field
on the bound lattice)::

    family   region      field                 target
    init     X0          phi^T b               <= eta
    unsafe   Xu          phi^T b               >= 1
    pos      X           phi^T b               >= 0
    kush     X           phi^T (H - I) b       <= c - eps*Bbar*kappa - s_res

Each family owns variables ``lo``/``hi`` bracketing ``v`` on the lattice
points of ``S'`` (rows ``<fam>_<i>_l``/``_u``). When its local coefficient
coefficients are positive it also owns ``olo``/``ohi`` bracketing ``v`` on
the other lattice points (rows ``comp0_i``, ``compU_i``, ``compX_i``,
``compK_i`` with ``_l``/``_u`` suffixes) and nonnegative excess variables
``ehi >= ohi - hi`` and ``elo >= lo - olo`` (rows ``<fam>_exc_hi``/``_lo``).
Row ``<fam>_bound`` (and ``<fam>_bound_alt`` when the excess term has two
weight pairs ``(p, n)``, see :func:`fourier_cbc.bounds.excess_weights`)
applies the local bound of :mod:`fourier_cbc.bounds`::

    upper target:  (1+C)/2 hi - (C-1)/2 lo + p ehi + n elo <= target
    lower target:  (1+C)/2 lo - (C-1)/2 hi - p elo - n ehi >= target

Optional residual rows ``resid_<d>: E_d b - s_res <= 0`` carry a measured
correction field ``E`` (exact CME term minus its spectral surrogate) into the
decrease condition.

Row count: for a family with ``k`` lattice points in ``S'`` out of ``N``,
``2k + 1`` rows, plus ``2(N - k) + 2 + (w - 1)`` when ``A > 0``, with ``w``
the number of weight pairs; plus one row per
residual point.

Text format::

    minimize: 1.0 eta + 5.0 c
    subject to:
    name: 0.25 b0 + -1.0 init_hi <= 0.0
    bounds:
    -inf <= b0 <= inf
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import TighteningCoefficients
from .geometry import Domain, Region
from .spectral import SpectralBasis, TransferMatrix, feature_map

ETA_MAX = 1.0 - 1e-9

FAMILIES = {
    # name: (partition label, complement row prefix, target side)
    "init": ("init", "comp0", "upper"),
    "unsafe": ("unsafe", "compU", "lower"),
    "pos": ("domain", "compX", "lower"),
    "kush": ("domain", "compK", "upper"),
}


class LPError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """Safety specification and robustness constants."""

    domain: Domain
    initial: Region
    unsafe: Region
    horizon: int
    epsilon: float = 0.0
    norm_cap: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise LPError("horizon must be a positive integer")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise LPError("epsilon must be finite and nonnegative")
        if not (self.norm_cap > 0 and math.isfinite(self.norm_cap)):
            raise LPError("norm cap must be positive")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise LPError("kappa must be positive")

    @property
    def robust_offset(self) -> float:
        return self.epsilon * self.norm_cap * self.kappa


@dataclass
class LPModel:
    """Dense LP ``min c^T x`` subject to ``A x (<=|>=) rhs`` and variable bounds."""

    var_names: list
    objective: np.ndarray
    matrix: np.ndarray
    senses: np.ndarray  # array of "<=" / ">="
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    row_names: list
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.matrix = np.asarray(self.matrix, dtype=float).reshape(len(self.row_names), len(self.var_names))
        self.senses = np.asarray(self.senses, dtype="<U2")
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        nv = len(self.var_names)
        if self.objective.shape != (nv,) or self.lower.shape != (nv,) or self.upper.shape != (nv,):
            raise LPError("objective/bounds length differs from the variable count")
        if self.rhs.shape != (len(self.row_names),) or self.senses.shape != self.rhs.shape:
            raise LPError("row data lengths disagree")
        if not set(np.unique(self.senses)) <= {"<=", ">="}:
            raise LPError("relations must be <= or >=")
        if len(set(self.var_names)) != nv:
            raise LPError("duplicate variable names")

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    def index(self, name: str) -> int:
        return self.var_names.index(name)

    def residuals(self, x) -> np.ndarray:
        """Per-row violation (positive means violated)."""
        ax = self.matrix @ np.asarray(x, dtype=float)
        return np.where(self.senses == "<=", ax - self.rhs, self.rhs - ax)

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        rows = self.residuals(x)
        worst = float(rows.max()) if rows.size else 0.0
        with np.errstate(invalid="ignore"):
            bnd = max(float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return max(worst, bnd, 0.0)

    def value(self, x, name: str) -> float:
        return float(np.asarray(x)[self.index(name)])


# --------------------------------------------------------------------------- assembly


class _Builder:
    def __init__(self):
        self.vars: list[str] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.blocks: list[np.ndarray] = []
        self.senses: list[np.ndarray] = []
        self.rhs: list[np.ndarray] = []
        self.names: list[str] = []

    def var(self, name, lo=-np.inf, hi=np.inf) -> int:
        self.vars.append(name)
        self.lo.append(lo)
        self.hi.append(hi)
        return len(self.vars) - 1

    def rows(self, coeffs: list[tuple[int, np.ndarray]], dense_b: np.ndarray | None,
             sense: str, rhs, names: list[str]):
        """Append rows; ``dense_b`` (k, dim_b) covers the leading b block."""
        self.blocks.append((dense_b, coeffs, len(names)))
        self.senses.append(np.full(len(names), sense))
        self.rhs.append(np.broadcast_to(np.asarray(rhs, dtype=float), (len(names),)).copy())
        self.names.extend(names)

    def finish(self, dim_b: int, objective: dict) -> LPModel:
        nv = len(self.vars)
        nr = len(self.names)
        mat = np.zeros((nr, nv))
        r = 0
        for dense_b, coeffs, k in self.blocks:
            if dense_b is not None:
                mat[r:r + k, :dim_b] = dense_b
            for j, col in coeffs:
                mat[r:r + k, j] += col
            r += k
        obj = np.zeros(nv)
        for name, v in objective.items():
            obj[self.vars.index(name)] = v
        return LPModel(self.vars, obj, mat,
                       np.concatenate(self.senses) if self.senses else np.empty(0, dtype="<U2"),
                       np.concatenate(self.rhs) if self.rhs else np.empty(0),
                       np.array(self.lo), np.array(self.hi), self.names)


def assemble(spec: ProblemSpec, basis: SpectralBasis, transfer: TransferMatrix, lattice,
             partitions: dict, tight: TighteningCoefficients,
             residual_field: np.ndarray | None = None, select: dict | None = None) -> LPModel:
    """Build the LP.

    Parameters
    ----------
    partitions : dict
        ``{"init" | "unsafe" | "domain": (inside_indices, outside_indices)}``
        over the bound lattice, for the inflated regions.
    tight : TighteningCoefficients
        ``A_map`` keyed by the same labels.
    residual_field : ndarray, shape (k, 2M+1), optional
        Rows ``E_d`` of the correction field on a residual grid.
    select : dict, optional
        Emit point rows only for a subset: ``{family: (inside, outside)}``
        with subsets of the partition indices, and ``{"resid": rows}`` for
        residual rows. Variables and bound rows are unaffected, so the result
        is a relaxation of the full LP with the same variable layout.
    """
    for label in ("init", "unsafe", "domain"):
        if label not in partitions:
            raise LPError(f"missing lattice partition for {label!r}")
        a = tight.A(label)
        denom = tight.C - 2.0 * a + 1.0
        if denom <= 0:
            raise LPError(f"tightening denominator {denom:.3g} <= 0 for region {label!r} (A = {a:.4g})")
    for label in ("init", "unsafe"):
        if len(partitions[label][0]) == 0:
            raise LPError(f"no lattice point falls in the {label} set; the specification "
                          "cannot be verified at this resolution")

    dim = basis.dim
    point_sets = {}
    for fam, (label, _, _) in FAMILIES.items():
        inside, outside = (np.asarray(p, dtype=int) for p in partitions[label])
        if select is not None and fam in select:
            inside, outside = (np.asarray(p, dtype=int) for p in select[fam])
        point_sets[fam] = (inside, outside)
    # features only where rows are emitted; ``at`` maps lattice index -> row of phi
    needed = np.unique(np.concatenate([np.concatenate(p) for p in point_sets.values()]).astype(int))
    phi = feature_map(lattice.points[needed], basis)
    kush = phi @ (transfer.H - np.eye(dim))
    fields = {"init": phi, "unsafe": phi, "pos": phi, "kush": kush}

    bld = _Builder()
    active = basis.active
    for j in range(dim):
        bld.var(f"b{j}", *((-np.inf, np.inf) if active[j] else (0.0, 0.0)))
    j_c = bld.var("c", 0.0, np.inf)
    j_eta = bld.var("eta", 0.0, ETA_MAX)
    j_res = bld.var("s_res", 0.0, np.inf) if residual_field is not None and len(residual_field) else None

    C = tight.C
    offset = spec.robust_offset
    counts = {}
    for fam, (label, comp, side) in FAMILIES.items():
        inside, outside = point_sets[fam]
        has_outside = len(partitions[label][1]) > 0
        weights = tight.weights(label) if tight.A(label) > 0 else []
        v = fields[fam]

        def at(idx, v=v):
            return v[np.searchsorted(needed, idx)]

        j_lo = bld.var(f"{fam}_lo")
        j_hi = bld.var(f"{fam}_hi")
        k = inside.size
        ones = np.ones(k)
        bld.rows([(j_hi, -ones)], at(inside), "<=", 0.0, [f"{fam}_{i}_u" for i in inside])
        bld.rows([(j_lo, -ones)], at(inside), ">=", 0.0, [f"{fam}_{i}_l" for i in inside])
        n_rows = 2 * k
        j_ehi = j_elo = None
        if weights and has_outside:
            j_olo = bld.var(f"{fam}_olo")
            j_ohi = bld.var(f"{fam}_ohi")
            j_ehi = bld.var(f"{fam}_ehi", 0.0, np.inf)
            j_elo = bld.var(f"{fam}_elo", 0.0, np.inf)
            ones = np.ones(outside.size)
            bld.rows([(j_ohi, -ones)], at(outside), "<=", 0.0, [f"{comp}_{i}_u" for i in outside])
            bld.rows([(j_olo, -ones)], at(outside), ">=", 0.0, [f"{comp}_{i}_l" for i in outside])
            one = np.ones(1)
            bld.rows([(j_ehi, one), (j_ohi, -one), (j_hi, one)], None, ">=", 0.0, [f"{fam}_exc_hi"])
            bld.rows([(j_elo, one), (j_lo, -one), (j_olo, one)], None, ">=", 0.0, [f"{fam}_exc_lo"])
            n_rows += 2 * outside.size + 2
        one = np.ones(1)
        big, small = 0.5 * (1.0 + C), 0.5 * (C - 1.0)
        if side == "upper":
            terms = [(j_hi, big * one), (j_lo, -small * one)]
            if fam == "init":
                terms.append((j_eta, -one))
                rhs = 0.0
            else:
                terms.append((j_c, -one))
                if j_res is not None:
                    terms.append((j_res, one))
                rhs = -offset
            sense = "<="
        else:
            terms = [(j_lo, big * one), (j_hi, -small * one)]
            rhs = 1.0 if fam == "unsafe" else 0.0
            sense = ">="
        if j_ehi is None:
            bld.rows(terms, None, sense, rhs, [f"{fam}_bound"])
            n_rows += 1
        else:
            for w, (p, q) in enumerate(weights):
                extra = ([(j_ehi, p * one), (j_elo, q * one)] if side == "upper"
                         else [(j_elo, -p * one), (j_ehi, -q * one)])
                bld.rows(terms + extra, None, sense, rhs, [f"{fam}_bound" + ("_alt" if w else "")])
            n_rows += len(weights)
        counts[fam] = n_rows

    if j_res is not None:
        e = np.asarray(residual_field, dtype=float)
        rows = np.arange(e.shape[0])
        if select is not None and "resid" in select:
            rows = np.asarray(select["resid"], dtype=int)
        bld.rows([(j_res, -np.ones(rows.size))], e[rows], "<=", 0.0, [f"resid_{d}" for d in rows])
        counts["resid"] = rows.size

    model = bld.finish(dim, {"eta": 1.0, "c": float(spec.horizon)})
    model.info = {"family_rows": counts, "C": C, "A": dict(tight.A_map),
                  "A_pos": {k: tight.A_pos(k) for k in tight.A_map},
                  "A_neg": {k: tight.A_neg(k) for k in tight.A_map},
                  "robust_offset": offset, "dim_b": dim}
    return model


def expected_row_count(partitions: dict, tight: TighteningCoefficients, lattice_size: int,
                       residual_points: int = 0) -> int:
    """Row count predicted by the family layout (see module docstring)."""
    total = residual_points
    for fam, (label, _, _) in FAMILIES.items():
        k = len(partitions[label][0])
        total += 2 * k + 1
        if tight.A(label) > 0 and lattice_size - k > 0:
            total += 2 * (lattice_size - k) + 2 + len(tight.weights(label)) - 1
    return total


# --------------------------------------------------------------------------- text format


def _fmt(v: float) -> str:
    return repr(float(v))


def _expr(coeffs: np.ndarray, names: list[str]) -> str:
    nz = np.flatnonzero(coeffs)
    if nz.size == 0:
        return "0"
    return " + ".join(f"{_fmt(coeffs[j])} {names[j]}" for j in nz)


def export_lp(model: LPModel) -> str:
    """Serialize to the text format in the module docstring."""
    lines = [f"minimize: {_expr(model.objective, model.var_names)}", "subject to:"]
    for i, name in enumerate(model.row_names):
        lines.append(f"{name}: {_expr(model.matrix[i], model.var_names)} {model.senses[i]} {_fmt(model.rhs[i])}")
    lines.append("bounds:")
    for j, name in enumerate(model.var_names):
        lines.append(f"{_fmt(model.lower[j])} <= {name} <= {_fmt(model.upper[j])}")
    return "\n".join(lines) + "\n"


def _parse_expr(text: str, index: dict, nv: int, where: str) -> np.ndarray:
    out = np.zeros(nv)
    text = text.strip()
    if text == "0":
        return out
    for term in text.split(" + "):
        parts = term.split()
        if len(parts) != 2:
            raise LPError(f"{where}: malformed term {term!r}")
        coef, name = parts
        if name not in index:
            raise LPError(f"{where}: undeclared variable {name!r}")
        try:
            out[index[name]] += float(coef)
        except ValueError:
            raise LPError(f"{where}: bad coefficient {coef!r}") from None
    return out


def parse_lp(text: str) -> LPModel:
    """Inverse of :func:`export_lp`. Variables are declared by the bounds section."""
    lines = text.splitlines()
    if len(lines) < 3 or not lines[0].startswith("minimize:") or lines[1] != "subject to:":
        raise LPError("LP text must start with 'minimize:' and 'subject to:'")
    try:
        b_at = lines.index("bounds:")
    except ValueError:
        raise LPError("missing 'bounds:' section") from None
    names, lo, hi = [], [], []
    for k, line in enumerate(lines[b_at + 1:], start=b_at + 2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5 or parts[1] != "<=" or parts[3] != "<=":
            raise LPError(f"line {k}: malformed bound {line!r}")
        lo.append(float(parts[0]))
        names.append(parts[2])
        hi.append(float(parts[4]))
    index = {n: j for j, n in enumerate(names)}
    nv = len(names)
    objective = _parse_expr(lines[0][len("minimize:"):], index, nv, "line 1")
    rows, senses, rhs, row_names = [], [], [], []
    for k, line in enumerate(lines[2:b_at], start=3):
        name, sep, body = line.partition(": ")
        if not sep:
            raise LPError(f"line {k}: missing row name")
        for rel in (" <= ", " >= "):
            if rel in body:
                lhs, _, r = body.rpartition(rel)
                break
        else:
            raise LPError(f"line {k}: missing relation")
        rows.append(_parse_expr(lhs, index, nv, f"line {k}"))
        senses.append(rel.strip())
        rhs.append(float(r))
        row_names.append(name)
    matrix = np.array(rows) if rows else np.zeros((0, nv))
    return LPModel(names, objective, matrix, senses, rhs, lo, hi, row_names)
