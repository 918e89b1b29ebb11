"""Dense revised simplex and an external-backend adapter.

Every model is first rewritten as ``min c^T x`` subject to ``G x >= h`` with
``x`` free (finite variable bounds become rows). Identical rows are merged,
keeping the tightest right-hand side.

* Tall problems (more rows than columns) are solved through the dual
  ``max h^T y  s.t.  G^T y = c, y >= 0``, which has only ``n`` equality rows;
  the primal point is recovered from the simplex multipliers.
* Otherwise the primal is solved directly as
  ``[G, -G, -I] (x+, x-, s) = h`` with all parts nonnegative.

The core is a two-phase revised simplex on standard form that refactorizes
the basis with LU at every pivot. Pricing is Dantzig's rule on column-norm
scaled reduced costs with a Harris ratio test; after a streak of degenerate
pivots it switches to Bland's rule. Residuals of the final point are always
measured on the original rows.

Backend solution files hold one ``status <word>`` line followed by
``<var> <value>`` lines.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .lp import LPModel, export_lp

STATUSES = ("optimal", "infeasible", "unbounded", "iteration-limit")


class SolverError(RuntimeError):
    pass


class BackendError(SolverError):
    pass


@dataclass
class LPSolution:
    """Solver outcome.

    ``duals`` holds nonnegative multipliers for the ``>=``-normalized rows of
    the model followed by those of its finite variable bounds (lower, then
    upper); ``dual_objective`` is the matching lower bound on the objective.
    """

    status: str
    x: np.ndarray
    objective: float
    max_residual: float
    iterations: int
    var_names: list = field(default_factory=list)
    duals: np.ndarray | None = None
    dual_objective: float | None = None
    message: str = ""

    @property
    def values(self) -> dict:
        return dict(zip(self.var_names, map(float, self.x)))

    def value(self, name: str) -> float:
        return float(self.x[self.var_names.index(name)])


# --------------------------------------------------------------------------- standard-form core


@dataclass
class _Result:
    status: str
    x: np.ndarray
    pi: np.ndarray
    iterations: int


class _RevisedSimplex:
    """``min c^T x  s.t.  A x = b, x >= 0`` with ``b >= 0``.

    The basis is refactorized with a fresh LU at every pivot, which is cheap
    because both routes keep the number of rows small.
    """

    def __init__(self, A, b, c, tol=1e-9, max_iter=50_000, degenerate_streak=50):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.m, self.n = self.A.shape
        self.tol = tol
        self.piv_tol = 1e-7
        self.feas_tol = 1e-9
        self.perturbation = 1e-6
        self.max_iter = max_iter
        self.degenerate_streak = degenerate_streak
        self.iterations = 0

    def _refactor(self, basis):
        B = self.A[:, basis]
        lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
        diag = np.abs(np.diag(lu))
        if diag.min(initial=np.inf) <= 1e-13 * max(1.0, diag.max(initial=0.0)):
            raise SolverError("basis matrix became singular")
        self.lu = (lu, piv)
        self.xB = scipy.linalg.lu_solve(self.lu, self.b, check_finite=False)

    def _ftran(self, a):
        return scipy.linalg.lu_solve(self.lu, a, check_finite=False)

    def _btran(self, cb):
        return scipy.linalg.lu_solve(self.lu, cb, trans=1, check_finite=False)

    def _iterate(self, basis, cost, allowed):
        """Run simplex on ``cost`` from ``basis``; ``allowed`` masks enterable columns."""
        self._refactor(basis)
        in_basis = np.zeros(self.n, dtype=bool)
        in_basis[basis] = True
        weights = 1.0 / np.maximum(np.linalg.norm(self.A, axis=0), 1e-12)
        skipped = np.zeros(self.n, dtype=bool)
        bland = False
        streak = 0
        while True:
            if self.iterations >= self.max_iter:
                return "iteration-limit"
            pi = self._btran(cost[basis])
            d = cost - pi @ self.A
            cand = allowed & ~in_basis & ~skipped & (d < -self.tol)
            if not np.any(cand):
                return "optimal"
            if bland:
                q = int(np.flatnonzero(cand)[0])
            else:
                q = int(np.argmin(np.where(cand, d * weights, np.inf)))
            u = self._ftran(self.A[:, q])
            pos = u > self.piv_tol * max(1.0, float(np.abs(u).max()))
            if not np.any(pos):
                if not np.any(u > self.feas_tol):
                    return "unbounded"
                # only unreliable pivots: leave this column out until the basis moves
                skipped[q] = True
                continue
            xb = np.maximum(self.xB, 0.0)
            ratios = np.full(self.m, np.inf)
            ratios[pos] = xb[pos] / u[pos]
            if bland:
                theta = ratios.min()
                ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
                r = int(ties[np.argmin(np.asarray(basis)[ties])])
            else:
                # Harris: among near-minimal ratios take the largest pivot
                relaxed = np.full(self.m, np.inf)
                relaxed[pos] = (xb[pos] + self.feas_tol) / u[pos]
                ties = np.flatnonzero(ratios <= relaxed.min())
                r = int(ties[np.argmax(u[ties])])
            theta = ratios[r]
            in_basis[basis[r]] = False
            in_basis[q] = True
            basis[r] = q
            self.iterations += 1
            self._refactor(basis)
            skipped[:] = False
            if theta <= 1e-12:
                streak += 1
                if streak >= self.degenerate_streak:
                    bland = True
            else:
                streak = 0

    def solve(self) -> _Result:
        m, n = self.m, self.n
        # Shift the bounds to x >= -delta: the shifted problem is feasible
        # whenever the original is, and it is almost never degenerate.
        rng = np.random.default_rng(0)
        delta = self.perturbation * (1.0 + rng.random(n))
        b_true = self.b.copy()
        b_shift = self.b + self.A @ delta
        sign = np.where(b_shift < 0, -1.0, 1.0)
        self.A = self.A * sign[:, None]
        self.b = b_shift * sign
        b_true = b_true * sign
        self.sign = sign

        # phase I with one artificial per row
        A1 = np.hstack([self.A, np.eye(m)])
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        orig = (self.A, self.n)
        self.A, self.n = A1, n + m
        basis = list(range(n, n + m))
        allowed = np.ones(n + m, dtype=bool)
        status = self._iterate(basis, c1, allowed)
        if status == "iteration-limit":
            res = self._pack(status, basis, c1)
            res.x = res.x[:n]
            return res
        infeas = float(c1[basis] @ self.xB)
        scale = max(1.0, float(np.abs(self.b).max(initial=0.0)))
        if infeas > 1e-7 * scale:
            res = self._pack("infeasible", basis, c1)
            res.x = res.x[:n]
            return res
        # drive artificials out of the basis where possible
        keep_rows = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= n:
                row = self._btran(np.eye(m)[r]) @ orig[0]
                cands = np.flatnonzero((np.abs(row) > 1e-7) & ~np.isin(np.arange(n), basis))
                if cands.size:
                    q = int(cands[np.argmax(np.abs(row[cands]))])
                    basis[r] = q
                    self._refactor(basis)
                else:
                    keep_rows[r] = False  # redundant equality
        self.A, self.n = orig
        if not keep_rows.all():
            self.A = self.A[keep_rows]
            self.b = self.b[keep_rows]
            b_true = b_true[keep_rows]
            self.m = int(keep_rows.sum())
            basis = [basis[r] for r in range(m) if keep_rows[r]]
        self.keep_rows = keep_rows
        allowed = np.ones(self.n, dtype=bool)
        status = self._iterate(basis, self.c, allowed)
        if status != "optimal":
            return self._pack(status, basis, self.c)
        # restore the true bounds and repair primal feasibility
        self.b = b_true
        for _ in range(4):
            status = self._dual_cleanup(basis, self.c)
            if status != "optimal":
                break
            status = self._iterate(basis, self.c, allowed)
            if status != "optimal" or self.xB.min(initial=0.0) >= -self.feas_tol:
                break
        return self._pack(status, basis, self.c)

    def _dual_cleanup(self, basis, cost):
        """Dual simplex pivots until the basic solution is nonnegative."""
        self._refactor(basis)
        in_basis = np.zeros(self.n, dtype=bool)
        in_basis[basis] = True
        eye = np.eye(self.m)
        while True:
            r = int(np.argmin(self.xB))
            if self.xB[r] >= -self.feas_tol:
                return "optimal"
            if self.iterations >= self.max_iter:
                return "iteration-limit"
            pi = self._btran(cost[basis])
            d = np.maximum(cost - pi @ self.A, 0.0)
            alpha = self._btran(eye[r]) @ self.A
            cand = ~in_basis & (alpha < -self.piv_tol)
            if not np.any(cand):
                return "infeasible"
            ratio = np.where(cand, d / np.where(cand, -alpha, 1.0), np.inf)
            best = ratio.min()
            ties = np.flatnonzero(ratio <= best + 1e-12 * max(1.0, best))
            q = int(ties[np.argmin(alpha[ties])])
            in_basis[basis[r]] = False
            in_basis[q] = True
            basis[r] = q
            self.iterations += 1
            self._refactor(basis)

    def _pack(self, status, basis, cost):
        self._refactor(basis)
        x = np.zeros(self.n)
        nb = [j for j in basis if j < self.n]
        x[nb] = self.xB[[k for k, j in enumerate(basis) if j < self.n]]
        pi = self._btran(cost[basis])
        if hasattr(self, "keep_rows") and not self.keep_rows.all():
            full = np.zeros(self.keep_rows.size)
            full[self.keep_rows] = pi
            pi = full
        pi = pi * self.sign
        return _Result(status, np.maximum(x, 0.0), pi, self.iterations)


# --------------------------------------------------------------------------- model-level solve


def _normalize(model: LPModel):
    """``G x >= h`` rows from constraints and finite bounds; returns (G, h, tags)."""
    G = np.where((model.senses == "<=")[:, None], -model.matrix, model.matrix)
    h = np.where(model.senses == "<=", -model.rhs, model.rhs)
    nv = model.n_vars
    eye = np.eye(nv)
    lo_idx = np.flatnonzero(np.isfinite(model.lower))
    hi_idx = np.flatnonzero(np.isfinite(model.upper))
    G = np.vstack([G, eye[lo_idx], -eye[hi_idx]])
    h = np.concatenate([h, model.lower[lo_idx], -model.upper[hi_idx]])
    return G, h, lo_idx, hi_idx


def _dedupe(G: np.ndarray, h: np.ndarray):
    """Merge identical rows keeping the largest rhs; returns (G', h', owner)."""
    if G.shape[0] == 0:
        return G, h, np.zeros(0, dtype=int)
    uniq, inverse = np.unique(G, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    h_best = np.full(uniq.shape[0], -np.inf)
    np.maximum.at(h_best, inverse, h)
    # representative row per group: the first achieving the best rhs
    owner = np.full(uniq.shape[0], -1)
    for i in np.argsort(np.arange(G.shape[0]))[::-1]:
        g = inverse[i]
        if h[i] == h_best[g]:
            owner[g] = i
    order = np.argsort(owner)
    return uniq[order], h_best[order], owner[order]


def solve(model: LPModel, tolerance: float = 1e-8, iteration_cap: int = 50_000,
          route: str = "auto") -> LPSolution:
    """Solve ``model`` with the built-in simplex.

    Parameters
    ----------
    tolerance : float
        Maximum accepted row/bound violation of an optimal point.
    iteration_cap : int
        Pivot budget across both phases.
    route : {"auto", "dual", "primal"}
        Which standard form to hand to the simplex core.
    """
    G_full, h_full, lo_idx, hi_idx = _normalize(model)
    c = model.objective
    nv = model.n_vars
    G, h, owner = _dedupe(G_full, h_full)
    # unit max-norm rows; multipliers are rescaled on the way out
    row_scale = np.abs(G).max(axis=1) if G.size else np.zeros(0)
    row_scale[row_scale == 0] = 1.0
    G = G / row_scale[:, None]
    h = h / row_scale
    if route == "auto":
        route = "dual" if G.shape[0] > nv else "primal"
    opt_tol = min(1e-9, 0.1 * tolerance)

    if route == "dual":
        status, x, y, its = _solve_dual(G, h, c, opt_tol, iteration_cap)
        if status == "dual-infeasible":
            # primal is unbounded or infeasible; a zero objective tells which
            feas, _, _, its2 = _solve_dual(G, h, np.zeros(nv), opt_tol, iteration_cap)
            its += its2
            status = "infeasible" if feas == "infeasible" else "unbounded"
            if feas == "iteration-limit":
                status = "iteration-limit"
    else:
        status, x, y, its = _solve_primal(G, h, c, opt_tol, iteration_cap)

    dual_full = None
    dual_obj = None
    if y is not None:
        y = y / row_scale
        dual_full = np.zeros(G_full.shape[0])
        dual_full[owner] = y
        dual_obj = float((h * row_scale) @ y)
    if x is None:
        x = np.zeros(nv)
    objective = float(c @ x)
    resid = model.max_violation(x) if status in ("optimal", "iteration-limit") else float("nan")
    message = ""
    if status == "optimal" and not resid <= tolerance:
        raise SolverError(f"numerical breakdown: optimal basis violates rows by {resid:.3e} "
                          f"(tolerance {tolerance:.1e})")
    if status == "iteration-limit":
        message = f"stopped after {its} pivots"
    return LPSolution(status, x, objective, resid, its, list(model.var_names),
                      dual_full, dual_obj, message)


def _solve_dual(G, h, c, tol, cap):
    """Solve ``min -h^T y  s.t.  G^T y = c, y >= 0``; primal ``x = -pi``."""
    A = G.T.copy()
    b = c.copy()
    cost = -h
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1
    core = _RevisedSimplex(A, b, cost, tol=tol, max_iter=cap)
    res = core.solve()
    pi = np.where(flip, -res.pi, res.pi)
    if res.status == "infeasible":
        return "dual-infeasible", None, None, res.iterations
    if res.status == "unbounded":
        return "infeasible", None, None, res.iterations
    x = -pi
    return res.status, x, res.x, res.iterations


def _solve_primal(G, h, c, tol, cap):
    """Solve ``min c^T (x+ - x-)  s.t.  G x+ - G x- - s = h``."""
    m, nv = G.shape
    A = np.hstack([G, -G, -np.eye(m)])
    b = h.copy()
    cost = np.concatenate([c, -c, np.zeros(m)])
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1
    core = _RevisedSimplex(A, b, cost, tol=tol, max_iter=cap)
    res = core.solve()
    pi = np.where(flip, -res.pi, res.pi)
    if res.status in ("infeasible", "unbounded"):
        return res.status, None, None, res.iterations
    x = res.x[:nv] - res.x[nv:2 * nv]
    return res.status, x, np.maximum(pi, 0.0), res.iterations


# --------------------------------------------------------------------------- backend


def write_solution(path, status: str, names, values) -> None:
    lines = [f"status {status}"] + [f"{n} {float(v)!r}" for n, v in zip(names, values)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_solution(text: str) -> tuple[str, dict]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("status "):
        raise BackendError("solution file must start with a 'status' line")
    status = lines[0].split(maxsplit=1)[1].strip()
    if status not in STATUSES:
        raise BackendError(f"unknown status {status!r}")
    values = {}
    for k, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise BackendError(f"line {k}: expected '<var> <value>'")
        try:
            values[parts[0]] = float(parts[1])
        except ValueError:
            raise BackendError(f"line {k}: bad value {parts[1]!r}") from None
    return status, values


def solve_via_backend(model: LPModel, backend, tolerance: float = 1e-8, timeout: float | None = None) -> LPSolution:
    """Run ``<backend> <model.lp> <solution.sol>`` and validate its answer.

    ``backend`` is a command string or argument list. The returned point is
    re-checked against the model rows; a violation above ``tolerance`` is
    rejected.
    """
    if not backend:
        raise BackendError("no LP backend configured")
    cmd = shlex.split(backend) if isinstance(backend, str) else list(backend)
    with tempfile.TemporaryDirectory() as tmp:
        lp_path = Path(tmp) / "model.lp"
        sol_path = Path(tmp) / "solution.sol"
        lp_path.write_text(export_lp(model), encoding="utf-8")
        try:
            proc = subprocess.run(cmd + [str(lp_path), str(sol_path)], capture_output=True,
                                  text=True, timeout=timeout)
        except FileNotFoundError:
            raise BackendError(f"backend command not found: {cmd[0]!r}") from None
        if proc.returncode != 0:
            raise BackendError(f"backend exited with code {proc.returncode}: {proc.stderr.strip()[-500:]}")
        if not sol_path.exists():
            raise BackendError("backend wrote no solution file")
        status, values = read_solution(sol_path.read_text(encoding="utf-8"))
    if status != "optimal":
        return LPSolution(status, np.zeros(model.n_vars), float("nan"), float("nan"), 0, list(model.var_names))
    missing = [n for n in model.var_names if n not in values]
    if missing:
        raise BackendError(f"backend solution lacks {len(missing)} variables, e.g. {missing[0]!r}")
    x = np.array([values[n] for n in model.var_names])
    if not np.all(np.isfinite(x)):
        raise BackendError("backend returned non-finite values")
    resid = model.max_violation(x)
    if resid > tolerance:
        raise BackendError(f"backend solution violates the model by {resid:.3e} (tolerance {tolerance:.1e})")
    return LPSolution("optimal", x, float(model.objective @ x), resid, 0, list(model.var_names))
