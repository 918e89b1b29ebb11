"""Truncated Fourier feature basis of the SQExp kernel and projection of the CME.

Feature layout for a basis with ``M`` nonzero multi-indices::

    phi(x) = sigma_f * [w_0,
                        sqrt(2) w_1 cos(theta_1), sqrt(2) w_1 sin(theta_1),
                        ...,
                        sqrt(2) w_M cos(theta_M), sqrt(2) w_M sin(theta_M)]

with phase ``theta_j = sum_i zeta_j[i] * dilation[i] * u_i`` and ``u`` the
unit-cube coordinates of ``x``. A barrier ``B = phi^T b`` is therefore the
trigonometric series ``alpha_0 + sum alpha_j cos + beta_j sin`` with
``alpha_0 = sigma_f w_0 b_0`` and ``(alpha_j, beta_j) = sqrt(2) sigma_f w_j
(b_{2j-1}, b_{2j})``.

Band weights: in unit-cube coordinates the output kernel is Gaussian with
per-axis lengthscale ``ell = sigma_l / width``, so its spectral measure is
``N(0, diag(ell)^-2)``. ``w_j**2`` is that measure's mass on the box
``[omega_j - dilation/2, omega_j + dilation/2]``. Only the nonnegative orthant
of multi-indices is enumerated; the mirrored band ``-omega_j`` is carried by
the sqrt(2) factor and mixed-sign bands are not represented.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .geometry import Domain, Lattice, affine_map, periodic_domain, product_lattice
from .kernels import CMEModel, KernelParams, sqexp_matrix

TWO_PI = 2.0 * math.pi
DEFAULT_MAX_FEATURES = 20_000
INACTIVE_WEIGHT_RATIO = 1e-12


class SpectralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Frequency grid, dilation and band weights defining the feature map.

    Attributes
    ----------
    multi_indices : ndarray of int, shape (M+1, n)
        Row-major enumeration of ``{0..m-1}^n``; row 0 is the zero index.
    dilation : ndarray, shape (n,)
        Frequency spacing in unit-cube coordinates.
    band_weights : ndarray, shape (M+1,)
        Nonnegative square roots of the band masses.
    domain : Domain
        State domain defining the affine map.
    amplitude : float
        ``sigma_f`` of the output kernel (square root of its variance).
    """

    multi_indices: np.ndarray
    dilation: np.ndarray
    band_weights: np.ndarray
    domain: Domain
    amplitude: float

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def M(self) -> int:
        return self.multi_indices.shape[0] - 1

    @property
    def dim(self) -> int:
        return 2 * self.M + 1

    @property
    def f_max(self) -> int:
        return int(self.multi_indices.max())

    @property
    def frequencies(self) -> np.ndarray:
        """Angular frequencies in unit-cube coordinates, ``zeta * dilation``."""
        return self.multi_indices * self.dilation

    @property
    def scale(self) -> np.ndarray:
        """Per-feature factor mapping ``b`` entries to series coefficients."""
        s = np.empty(self.dim)
        s[0] = self.amplitude * self.band_weights[0]
        pair = math.sqrt(2.0) * self.amplitude * self.band_weights[1:]
        s[1::2] = pair
        s[2::2] = pair
        return s

    @property
    def active(self) -> np.ndarray:
        """Features whose weight is numerically nonzero (others are pinned to 0)."""
        ref = max(self.band_weights.max(), np.finfo(float).tiny)
        ok = self.band_weights > INACTIVE_WEIGHT_RATIO * ref
        if self.amplitude == 0:
            ok = np.zeros_like(ok)
        mask = np.empty(self.dim, dtype=bool)
        mask[0] = ok[0]
        mask[1::2] = ok[1:]
        mask[2::2] = ok[1:]
        return mask

    @property
    def periodic_domain(self) -> Domain:
        return periodic_domain(self.domain, self.dilation)

    def feature_norm(self) -> float:
        w = self.band_weights
        return self.amplitude * math.sqrt(w[0] ** 2 + 2.0 * np.sum(w[1:] ** 2))

    def to_dict(self) -> dict:
        return {
            "multi_indices": self.multi_indices.tolist(),
            "dilation": self.dilation.tolist(),
            "band_weights": self.band_weights.tolist(),
            "domain": self.domain.to_dict(),
            "amplitude": self.amplitude,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralBasis":
        return cls(
            multi_indices=np.asarray(d["multi_indices"], dtype=int).reshape(-1, len(d["dilation"])),
            dilation=np.asarray(d["dilation"], dtype=float),
            band_weights=np.asarray(d["band_weights"], dtype=float),
            domain=Domain.from_dict(d["domain"]),
            amplitude=float(d["amplitude"]),
        )


def unit_lengthscales(kernel: KernelParams, domain: Domain) -> np.ndarray:
    """Kernel lengthscales expressed in unit-cube coordinates."""
    if kernel.n != domain.n:
        raise SpectralError("kernel and domain dimensions differ")
    return kernel.lengthscales / domain.width


def multi_index_grid(m_per_axis: int, n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(m_per_axis), repeat=n)), dtype=int).reshape(-1, n)


def _band_mass_1d(center, half, inv_std):
    """Gaussian mass on ``[center-half, center+half]`` for ``N(0, inv_std**2)``.

    Uses the upper-tail form so far-out bands keep full relative precision.
    """
    lo = np.abs(center) - half
    hi = np.abs(center) + half
    lo_z = lo / inv_std
    hi_z = hi / inv_std
    straddle = lo_z < 0
    tail = special.ndtr(-lo_z) - special.ndtr(-hi_z)
    # a band straddling zero is split at zero to avoid 1 - small cancellation
    mid = special.ndtr(hi_z) - special.ndtr(lo_z)
    return np.where(straddle, mid, tail)


def band_weights(basis_or_indices, kernel_out: KernelParams, dilation=None, domain=None) -> np.ndarray:
    """Square roots of the spectral masses of each frequency band.

    Accepts either a :class:`SpectralBasis` or (multi_indices, kernel, dilation, domain).
    """
    if isinstance(basis_or_indices, SpectralBasis):
        idx = basis_or_indices.multi_indices
        dilation = basis_or_indices.dilation
        domain = basis_or_indices.domain
    else:
        idx = np.asarray(basis_or_indices, dtype=int)
    rho = np.asarray(dilation, dtype=float)
    ell = unit_lengthscales(kernel_out, domain)
    inv_std = 1.0 / ell
    mass = np.ones(idx.shape[0])
    for i in range(idx.shape[1]):
        mass *= _band_mass_1d(idx[:, i] * rho[i], 0.5 * rho[i], inv_std[i])
    return np.sqrt(np.maximum(mass, 0.0))


def build_basis(m_per_axis: int, kernel_out: KernelParams, domain: Domain,
                max_dilation: float | None = None,
                max_features: int = DEFAULT_MAX_FEATURES) -> SpectralBasis:
    """Basis on ``{0..m-1}^n`` with bands jointly spanning +-3 spectral std.

    ``dilation = 6 / (ell * (2m - 1))`` per axis in unit-cube coordinates.
    ``max_dilation`` optionally caps it (``2*pi`` keeps the periodic domain a
    superset of the state domain).
    """
    if int(m_per_axis) != m_per_axis or m_per_axis < 1:
        raise SpectralError("m_per_axis must be a positive integer")
    n = domain.n
    if float(m_per_axis) ** n > max_features:
        raise SpectralError(f"{m_per_axis}^{n} multi-indices exceed the budget of {max_features}")
    ell = unit_lengthscales(kernel_out, domain)
    rho = 6.0 / (ell * (2 * m_per_axis - 1))
    if max_dilation is not None:
        rho = np.minimum(rho, max_dilation)
    idx = multi_index_grid(int(m_per_axis), n)
    weights = band_weights(idx, kernel_out, rho, domain)
    return SpectralBasis(idx, rho, weights, domain, kernel_out.sigma_f)


# --------------------------------------------------------------------------- evaluation


def phases(x, basis: SpectralBasis) -> np.ndarray:
    """``theta_j(x)`` for every nonzero multi-index; shape (m, M)."""
    u = affine_map(np.atleast_2d(np.asarray(x, dtype=float)), basis.domain)
    return (u * basis.dilation) @ basis.multi_indices[1:].T


def feature_map(x, basis: SpectralBasis) -> np.ndarray:
    """Features of one state (shape ``(2M+1,)``) or many (shape ``(m, 2M+1)``)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    th = phases(x, basis)
    out = np.empty((th.shape[0], basis.dim))
    out[:, 0] = 1.0
    out[:, 1::2] = np.cos(th)
    out[:, 2::2] = np.sin(th)
    out *= basis.scale
    return out[0] if single else out


def barrier_eval(b, basis: SpectralBasis, x) -> float | np.ndarray:
    """``phi(x)^T b`` for one or many states."""
    b = np.asarray(b, dtype=float)
    if b.shape != (basis.dim,):
        raise SpectralError(f"coefficient vector has length {b.size}, basis needs {basis.dim}")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(feature_map(x, basis) @ b)
    return feature_map(x, basis) @ b


def series_coefficients(b, basis: SpectralBasis) -> tuple[float, np.ndarray, np.ndarray]:
    """``(alpha_0, alpha, beta)`` of the trigonometric series of ``phi^T b``."""
    s = basis.scale * np.asarray(b, dtype=float)
    return float(s[0]), s[1::2].copy(), s[2::2].copy()


def _check_lattice(basis: SpectralBasis, lattice: Lattice) -> None:
    if lattice.n != basis.n:
        raise SpectralError("lattice and basis dimensions differ")
    if lattice.resolution < 2 * basis.f_max + 1:
        raise SpectralError(
            f"lattice resolution {lattice.resolution} is below the Nyquist minimum {2 * basis.f_max + 1}")
    if not np.allclose(lattice.dilation, basis.dilation, rtol=1e-14, atol=0):
        raise SpectralError("lattice was built for a different dilation")


def _spectrum_from_coefficients(coeffs: np.ndarray, basis: SpectralBasis, q: int) -> np.ndarray:
    """Complex DFT arrays (trailing shape (q,)*n) for coefficient vectors (k, 2M+1)."""
    k = coeffs.shape[0]
    s = coeffs * basis.scale
    spec = np.zeros((k,) + (q,) * basis.n, dtype=complex)
    spec[(slice(None),) + (0,) * basis.n] = s[:, 0]
    idx = basis.multi_indices[1:]
    pos = tuple(idx.T)
    neg = tuple((-idx % q).T)
    half = 0.5 * (s[:, 1::2] - 1j * s[:, 2::2])
    for j in range(idx.shape[0]):
        spec[(slice(None),) + tuple(p[j] for p in pos)] += half[:, j]
        spec[(slice(None),) + tuple(p[j] for p in neg)] += np.conj(half[:, j])
    return spec


def lattice_eval(b, basis: SpectralBasis, lattice: Lattice) -> np.ndarray:
    """Evaluate ``phi^T b`` on every lattice point with one inverse FFT.

    ``b`` may be a vector or a (k, 2M+1) stack; returns (size,) or (k, size).
    """
    _check_lattice(basis, lattice)
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    spec = _spectrum_from_coefficients(np.atleast_2d(b), basis, lattice.resolution)
    axes = tuple(range(1, basis.n + 1))
    vals = np.real(np.fft.ifftn(spec, axes=axes)) * lattice.size
    vals = vals.reshape(vals.shape[0], -1)
    return vals[0] if single else vals


def project_fields(samples: np.ndarray, basis: SpectralBasis, lattice: Lattice) -> tuple[np.ndarray, float]:
    """Basis coefficients of scalar fields sampled on the full lattice.

    Parameters
    ----------
    samples : ndarray, shape (size,) or (size, k)
        Field values at the lattice points (row-major order).

    Returns
    -------
    coeffs : ndarray, shape (2M+1,) or (2M+1, k)
        Coefficients ``c`` with ``phi^T c`` the band-limited part of each field.
    residual : float
        Max over lattice points and fields of ``|phi^T c - field|``.
    """
    _check_lattice(basis, lattice)
    g = np.asarray(samples, dtype=float)
    single = g.ndim == 1
    g2 = g.reshape(lattice.size, -1)
    if not np.all(np.isfinite(g2)):
        raise SpectralError("non-finite field samples")
    k = g2.shape[1]
    cube = g2.T.reshape((k,) + lattice.shape)
    axes = tuple(range(1, basis.n + 1))
    ghat = np.fft.fftn(cube, axes=axes) / lattice.size
    idx = basis.multi_indices[1:]
    sel = ghat[(slice(None),) + tuple(idx.T)]  # (k, M)
    series = np.empty((k, basis.dim))
    series[:, 0] = np.real(ghat[(slice(None),) + (0,) * basis.n])
    series[:, 1::2] = 2.0 * np.real(sel)
    series[:, 2::2] = -2.0 * np.imag(sel)
    act = basis.active
    coeffs = np.zeros_like(series)
    coeffs[:, act] = series[:, act] / basis.scale[act]
    recon = lattice_eval(coeffs, basis, lattice)
    residual = float(np.max(np.abs(recon - g2.T))) if k else 0.0
    out = coeffs.T
    return (out[:, 0] if single else out), residual


# --------------------------------------------------------------------------- CME projection


@dataclass(frozen=True)
class TransferMatrix:
    """Spectral surrogate ``phi(x)^T H b ~ w(x)^T Phi(successors) b``.

    ``residual`` is the max projection error on the fitting points; ``method``
    records how ``H`` was fit.
    """

    H: np.ndarray
    residual: float
    method: str = "fft"

    def to_dict(self) -> dict:
        return {"H": self.H.tolist(), "residual": self.residual, "method": self.method}

    @classmethod
    def from_dict(cls, d: dict) -> "TransferMatrix":
        return cls(np.asarray(d["H"], dtype=float), float(d["residual"]), d.get("method", "fft"))


def successor_fields(model: CMEModel, basis: SpectralBasis, points: np.ndarray,
                     chunk: int = 4096) -> np.ndarray:
    """``g_j(x) = w(x)^T phi_j(successors)`` at ``points``; shape (len(points), 2M+1)."""
    if basis.amplitude == 0:
        return np.zeros((points.shape[0], basis.dim))
    # (K + N lam I)^{-1} Phi(successors) once, then one kernel product per chunk
    v = model.solve(feature_map(model.samples.successors, basis))
    out = np.empty((points.shape[0], basis.dim))
    for s in range(0, points.shape[0], chunk):
        kx = sqexp_matrix(points[s:s + chunk], model.samples.states, model.kernel_in)
        out[s:s + chunk] = kx @ v
    return out


def project_cme(model: CMEModel, basis: SpectralBasis, fit_lattice: Lattice,
                method: str = "fft") -> TransferMatrix:
    """Fit ``H`` so that ``phi(x)^T H e_j`` reproduces ``g_j``.

    ``method="fft"`` transforms each ``g_j`` over the whole periodic lattice and
    keeps the basis frequencies. ``method="lstsq"`` instead fits ``H`` by least
    squares on the lattice points inside the state domain only, which avoids
    the wrap-around discontinuity ``g_j`` has on the periodic domain.
    """
    _check_lattice(basis, fit_lattice)
    if method == "fft":
        g = successor_fields(model, basis, fit_lattice.points)
        H, residual = project_fields(g, basis, fit_lattice)
        return TransferMatrix(H, residual, "fft")
    if method == "lstsq":
        inside = basis.domain.contains(fit_lattice.points, atol=1e-12)
        pts = fit_lattice.points[inside]
        act = basis.active
        if pts.shape[0] < int(act.sum()):
            raise SpectralError("too few fitting points inside the domain for a least-squares fit")
        g = successor_fields(model, basis, pts)
        if not np.all(np.isfinite(g)):
            raise SpectralError("non-finite CME field samples")
        phi = feature_map(pts, basis)[:, act]
        H = np.zeros((basis.dim, basis.dim))
        sol, *_ = np.linalg.lstsq(phi, g, rcond=None)
        H[act] = sol
        residual = float(np.max(np.abs(phi @ sol - g))) if g.size else 0.0
        return TransferMatrix(H, residual, "lstsq")
    raise SpectralError(f"unknown projection method {method!r}")


def fit_lattice_for(basis: SpectralBasis, oversample: int, max_points: int | None = None) -> Lattice:
    q = int(oversample) * (2 * basis.f_max + 1)
    kwargs = {} if max_points is None else {"max_points": max_points}
    return product_lattice(basis.domain, basis.dilation, q, **kwargs)
