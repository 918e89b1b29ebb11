"""Squared-exponential kernels and the empirical conditional mean embedding.

The CME weight function is

    w(x)^T = k_X(x)^T (K + N*lam*I)^{-1},

so that ``w(x) @ f(successors)`` estimates the conditional expectation of
``f`` after one step from ``x``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .geometry import Domain


class KernelError(ValueError):
    pass


class FactorizationError(KernelError):
    pass


@dataclass(frozen=True)
class KernelParams:
    """SQExp hyperparameters.

    Attributes
    ----------
    amplitude : float
        Output variance ``sigma_f**2``.
    lengthscales : ndarray
        Per-axis lengthscales in state units.
    """

    amplitude: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or np.any(~np.isfinite(ls)) or np.any(ls <= 0):
            raise KernelError(f"lengthscales must be positive and finite, got {ls}")
        if not (np.isfinite(self.amplitude) and self.amplitude >= 0):
            raise KernelError(f"amplitude must be nonnegative, got {self.amplitude}")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))

    @property
    def sigma_f(self) -> float:
        return float(np.sqrt(self.amplitude))

    @property
    def n(self) -> int:
        return self.lengthscales.size

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "lengthscales": self.lengthscales.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        return cls(d["amplitude"], d["lengthscales"])


def sqexp_matrix(x, y, params: KernelParams) -> np.ndarray:
    """Cross-kernel matrix ``k(x_i, y_j)`` for point arrays of shape (m, n), (p, n)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != params.n or y.shape[1] != params.n:
        raise KernelError(
            f"dimension mismatch: points have {x.shape[1]}/{y.shape[1]} coords, kernel has {params.n}")
    xs = x / params.lengthscales
    ys = y / params.lengthscales
    sq = (np.sum(xs**2, axis=1)[:, None] + np.sum(ys**2, axis=1)[None, :] - 2.0 * xs @ ys.T)
    np.maximum(sq, 0.0, out=sq)
    return params.amplitude * np.exp(-0.5 * sq)


def sqexp(x, x_prime, params: KernelParams) -> float:
    """Kernel value for a single pair of states."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != (params.n,) or x_prime.shape != (params.n,):
        raise KernelError("dimension mismatch between points and lengthscales")
    d = (x - x_prime) / params.lengthscales
    return float(params.amplitude * np.exp(-0.5 * d @ d))


def gram(points, params: KernelParams) -> np.ndarray:
    """Symmetric Gram matrix of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise KernelError("gram matrix of an empty point set")
    k = sqexp_matrix(points, points, params)
    return 0.5 * (k + k.T)


def median_heuristic(points) -> np.ndarray:
    """Per-axis median of pairwise absolute coordinate differences.

    Axes whose median is zero fall back to the mean pairwise difference.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[0] < 2:
        raise KernelError("median heuristic needs at least two points")
    i, j = np.triu_indices(p.shape[0], k=1)
    diffs = np.abs(p[i] - p[j])
    med = np.median(diffs, axis=0)
    mean = diffs.mean(axis=0)
    out = np.where(med > 0, med, mean)
    if np.any(out <= 0):
        raise KernelError("all points identical along some axis; no lengthscale can be inferred")
    return out


# --------------------------------------------------------------------------- data


@dataclass(frozen=True)
class SampleSet:
    """Transitions ``(states[i], successors[i])`` of the unknown system."""

    states: np.ndarray
    successors: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        sp = np.atleast_2d(np.asarray(self.successors, dtype=float))
        if s.shape != sp.shape:
            raise KernelError(f"states {s.shape} and successors {sp.shape} disagree")
        if s.shape[0] == 0:
            raise KernelError("empty sample set")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(sp))):
            raise KernelError("sample set contains non-finite values")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "successors", sp)

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def validate(self, domain: Domain) -> None:
        """Reject states outside ``domain``; warn on successors that leave it."""
        if domain.n != self.n:
            raise KernelError(f"dataset has {self.n} coordinates, domain has {domain.n}")
        if not np.all(domain.contains(self.states)):
            raise KernelError("some sampled states lie outside the domain")
        escaped = int(np.sum(~domain.contains(self.successors)))
        if escaped:
            warnings.warn(f"{escaped} successors lie outside the domain", stacklevel=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.n)] + [f"xp{i + 1}" for i in range(self.n)])
        for a, b in zip(self.states, self.successors):
            w.writerow([repr(float(v)) for v in a] + [repr(float(v)) for v in b])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "SampleSet":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise KernelError("empty dataset file")
        header = [h.strip() for h in rows[0]]
        if len(header) % 2 or not header:
            raise KernelError("dataset header must list x1..xn,xp1..xpn")
        n = len(header) // 2
        expected = [f"x{i + 1}" for i in range(n)] + [f"xp{i + 1}" for i in range(n)]
        if header != expected:
            raise KernelError(f"dataset header {header} does not match {expected}")
        body = [r for r in rows[1:] if r]
        try:
            data = np.array([[float(v) for v in r] for r in body], dtype=float)
        except ValueError as exc:
            raise KernelError(f"non-numeric dataset entry: {exc}") from None
        if data.ndim != 2 or data.shape[1] != 2 * n:
            raise KernelError("ragged dataset rows")
        return cls(data[:, :n], data[:, n:])

    @classmethod
    def load(cls, path) -> "SampleSet":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.states).tobytes())
        h.update(np.ascontiguousarray(self.successors).tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------- CME


@dataclass(frozen=True, eq=False)
class CMEModel:
    """Empirical conditional mean embedding with a cached factorization."""

    samples: SampleSet
    kernel_in: KernelParams
    kernel_out: KernelParams
    regularization: float
    factor: tuple = field(repr=False)
    method: str = "cholesky"

    @property
    def N(self) -> int:
        return self.samples.N

    def system_matrix(self) -> np.ndarray:
        return gram(self.samples.states, self.kernel_in) + self.N * self.regularization * np.eye(self.N)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(K + N*lam*I) z = rhs``."""
        if self.method == "cholesky":
            return linalg.cho_solve(self.factor, rhs, check_finite=False)
        return linalg.lu_solve(self.factor, rhs, check_finite=False)


def fit_cme(samples: SampleSet, kernel_in: KernelParams, kernel_out: KernelParams,
            regularization: float = 1e-5) -> CMEModel:
    """Factorize ``K + N*lam*I``; Cholesky first, pivoted LU as fallback."""
    if regularization < 0 or not np.isfinite(regularization):
        raise KernelError("regularization must be a finite nonnegative number")
    if kernel_in.n != samples.n or kernel_out.n != samples.n:
        raise KernelError("kernel dimension does not match the data")
    n_samples = samples.N
    mat = gram(samples.states, kernel_in) + n_samples * regularization * np.eye(n_samples)
    try:
        factor = linalg.cho_factor(mat, lower=True, check_finite=False)
        method = "cholesky"
    except linalg.LinAlgError:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)  # singularity is checked below
            lu, piv = linalg.lu_factor(mat, check_finite=False)
        diag = np.abs(np.diag(lu))
        if diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * n_samples:
            raise FactorizationError(
                "kernel system matrix is singular; increase the regularization "
                "or remove duplicate states") from None
        factor = (lu, piv)
        method = "lu"
    return CMEModel(samples, kernel_in, kernel_out, float(regularization), factor, method)


def cme_weights(x, model: CMEModel) -> np.ndarray:
    """Weight vectors ``w(x)``; returns shape (N,) for one state, (m, N) for many."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    kx = sqexp_matrix(np.atleast_2d(x), model.samples.states, model.kernel_in)
    w = model.solve(kx.T).T
    return w[0] if single else w


def cme_expectation(values_at_successors, w) -> float | np.ndarray:
    """``w @ f(successors)``; broadcasts over leading axes of ``w``."""
    f = np.asarray(values_at_successors, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != f.shape[0]:
        raise KernelError(f"weight length {w.shape[-1]} differs from value count {f.shape[0]}")
    return w @ f
