"""Certificate synthesis, independent checking and Monte-Carlo validation.

Pipeline: fit the CME, build the basis and the bound lattice, compute the
tightening coefficients on the inflated regions, fit the transfer matrix,
assemble and solve the LP, then enforce the norm cap by re-solving with a
doubled cap when needed.

The checker re-evaluates every certificate condition with the exact CME
weights rather than the spectral surrogate, on a grid denser than the bound
lattice, so surrogate error shows up as a measured residual.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bounds import SearchConfig, TighteningCoefficients, c_coefficient, local_coefficients
from .geometry import (Domain, Region, build_lattice, domain_region, filter_lattice,
                       inflate_region, region_from_dict, region_grid)
from .kernels import CMEModel, KernelParams, SampleSet, fit_cme, sqexp_matrix
from .lp import FAMILIES, LPModel, ProblemSpec, assemble, expected_row_count
from .solver import LPSolution, solve, solve_via_backend
from .spectral import (SpectralBasis, TransferMatrix, barrier_eval, build_basis, feature_map,
                       fit_lattice_for, lattice_eval, project_cme, successor_fields)
from .systems import SystemSpec, batch_rollout

SCHEMA_VERSION = 1
TWO_PI = 2.0 * math.pi


class CertificationError(RuntimeError):
    """Synthesis failed; ``family`` names the binding constraint family when known."""

    def __init__(self, message: str, family: str | None = None):
        super().__init__(message)
        self.family = family


def safety_probability(eta: float, c: float, T: int) -> float:
    """Lower bound ``max(0, 1 - (eta + c T))`` on the T-step safety probability."""
    if not (0.0 <= eta < 1.0):
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    if c < 0:
        raise ValueError(f"c must be nonnegative, got {c}")
    if int(T) != T or T < 1:
        raise ValueError("horizon must be a positive integer")
    return max(0.0, 1.0 - (eta + c * T))


VACUOUS_BELOW = 1e-8


def is_vacuous(p: float) -> bool:
    """True when ``p`` does not exceed the default LP feasibility tolerance."""
    return p <= VACUOUS_BELOW


# --------------------------------------------------------------------------- settings


@dataclass(frozen=True)
class SynthesisSettings:
    """Numerical settings of the pipeline.

    Attributes
    ----------
    m_per_axis : int
        Frequencies per axis of the barrier basis.
    oversample : int
        Bound lattice resolution as a multiple of ``2 f_max + 1``.
    fit_oversample : int
        Resolution multiple of the lattice used to fit the transfer matrix.
    projection : {"lstsq", "fft"}
        Transfer-matrix fitting method.
    inflation : float
        Relative region inflation before computing local coefficients.
    margin : float
        Extra absolute inflation in lattice spacings, added after the
        relative one. Local coefficients shrink roughly in inverse proportion
        to the distance between a region and the lattice points left outside
        its inflation, so thin regions need this more than a relative scale.
    max_dilation : float or None
        Cap on the basis dilation; ``2*pi`` keeps the periodic domain
        covering the state domain.
    residual_refine : int
        Per-axis refinement (relative to the bound lattice spacing) of the
        grid carrying surrogate-residual rows; 0 disables them.
    regularization : float
        CME regularizer ``lambda``.
    tolerance, iteration_cap, backend :
        Solver settings; ``backend`` is an external command or ``None``.
    norm_retries : int
        Maximum number of norm-cap doublings.
    row_generation : bool
        Solve the LP by adding lattice rows on demand instead of all at
        once. Every row of the full LP is still checked before a solution
        is accepted, so the optimum is the same.
    generation_seed_rows : int
        Rows per family in the first relaxation.
    generation_batch : int
        Most-violated rows added per family and side in each round.
    """

    m_per_axis: int = 4
    oversample: int = 8
    fit_oversample: int = 4
    projection: str = "lstsq"
    inflation: float = 0.02
    margin: float = 1.5
    max_dilation: float | None = TWO_PI
    residual_refine: int = 2
    regularization: float = 1e-5
    tolerance: float = 1e-8
    iteration_cap: int = 200_000
    backend: str | None = None
    norm_retries: int = 6
    row_generation: bool = True
    generation_seed_rows: int = 400
    generation_batch: int = 400
    search: SearchConfig = field(default_factory=SearchConfig)


# --------------------------------------------------------------------------- certificate


@dataclass
class Certificate:
    """Barrier coefficients with everything needed to re-evaluate and audit them."""

    basis: SpectralBasis
    b: np.ndarray
    eta: float
    c: float
    epsilon: float
    norm_cap: float
    kappa: float
    horizon: int
    probability: float
    kernel_in: KernelParams
    kernel_out: KernelParams
    regularization: float
    domain: Domain
    initial: Region
    unsafe: Region
    tightening: TighteningCoefficients
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.b))

    @property
    def vacuous(self) -> bool:
        return is_vacuous(self.probability)

    @property
    def infinite_horizon_bound(self) -> float:
        """``1 - eta``; a valid bound for every horizon only when ``c == 0`` exactly."""
        return 1.0 - self.eta

    def barrier(self, x):
        return barrier_eval(self.b, self.basis, x)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "basis": self.basis.to_dict(),
            "b": self.b.tolist(),
            "eta": self.eta,
            "c": self.c,
            "epsilon": self.epsilon,
            "norm_cap": self.norm_cap,
            "kappa": self.kappa,
            "horizon": self.horizon,
            "probability": self.probability,
            "vacuous": self.vacuous,
            "infinite_horizon_bound": {"value": self.infinite_horizon_bound,
                                       "valid": self.c == 0.0},
            "norm": self.norm,
            "kernel_in": self.kernel_in.to_dict(),
            "kernel_out": self.kernel_out.to_dict(),
            "regularization": self.regularization,
            "domain": self.domain.to_dict(),
            "initial": self.initial.to_dict(),
            "unsafe": self.unsafe.to_dict(),
            "tightening": self.tightening.to_dict(),
            "provenance": self.provenance,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise CertificationError(f"certificate schema version {version!r} is not supported "
                                     f"(expected {SCHEMA_VERSION})")
        return cls(
            basis=SpectralBasis.from_dict(d["basis"]),
            b=np.asarray(d["b"], dtype=float),
            eta=float(d["eta"]), c=float(d["c"]), epsilon=float(d["epsilon"]),
            norm_cap=float(d["norm_cap"]), kappa=float(d["kappa"]), horizon=int(d["horizon"]),
            probability=float(d["probability"]),
            kernel_in=KernelParams.from_dict(d["kernel_in"]),
            kernel_out=KernelParams.from_dict(d["kernel_out"]),
            regularization=float(d["regularization"]),
            domain=Domain.from_dict(d["domain"]),
            initial=region_from_dict(d["initial"]), unsafe=region_from_dict(d["unsafe"]),
            tightening=TighteningCoefficients.from_dict(d["tightening"]),
            provenance=d.get("provenance", {}), diagnostics=d.get("diagnostics", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Certificate":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------- synthesis


@dataclass
class Prepared:
    """Everything upstream of the LP; reused across epsilon sweeps."""

    cme: CMEModel
    basis: SpectralBasis
    lattice: object
    partitions: dict
    tightening: TighteningCoefficients
    transfer: TransferMatrix
    residual_points: np.ndarray
    residual_field: np.ndarray | None
    timings: dict


def _residual_grid(domain: Domain, lattice, refine: int) -> np.ndarray:
    spacing = lattice.domain.width / lattice.resolution / refine
    return region_grid(domain_region(domain), spacing)


def prepare(problem: ProblemSpec, settings: SynthesisSettings, data: SampleSet,
            kernel_in: KernelParams, kernel_out: KernelParams) -> Prepared:
    """Run the LP-independent stages of the pipeline."""
    timings = {}
    t0 = time.perf_counter()
    cme = fit_cme(data, kernel_in, kernel_out, settings.regularization)
    timings["fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    basis = build_basis(settings.m_per_axis, kernel_out, problem.domain, settings.max_dilation)
    lattice = build_lattice(basis, settings.oversample)
    regions = {"init": problem.initial, "unsafe": problem.unsafe, "domain": domain_region(problem.domain)}
    partitions = {}
    a_map, a_pos, a_neg = {}, {}, {}
    margin = settings.margin * lattice.domain.width / lattice.resolution
    for label, region in regions.items():
        grown = inflate_region(region, settings.inflation, margin=margin)
        inside, outside = filter_lattice(lattice, grown, periodic=True)
        partitions[label] = (inside, outside)
        coef = local_coefficients(lattice, outside, basis.f_max, region, settings.search)
        a_map[label], a_pos[label], a_neg[label] = coef["abs"], coef["pos"], coef["neg"]
    tight = TighteningCoefficients(c_coefficient(basis.f_max, lattice.resolution, basis.n), a_map,
                                   basis.f_max, lattice.resolution, basis.n, a_pos, a_neg)
    timings["lattice"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    fit_lat = fit_lattice_for(basis, settings.fit_oversample)
    transfer = project_cme(cme, basis, fit_lat, settings.projection)
    timings["transfer"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pts = np.empty((0, basis.n))
    resid = None
    if settings.residual_refine:
        pts = _residual_grid(problem.domain, lattice, settings.residual_refine)
        resid = successor_fields(cme, basis, pts) - feature_map(pts, basis) @ transfer.H
    timings["residual"] = time.perf_counter() - t0
    return Prepared(cme, basis, lattice, partitions, tight, transfer, pts, resid, timings)


def _solve(model: LPModel, settings: SynthesisSettings) -> LPSolution:
    if settings.backend:
        return solve_via_backend(model, settings.backend, settings.tolerance)
    return solve(model, settings.tolerance, settings.iteration_cap)


def _spread(idx: np.ndarray, count: int) -> np.ndarray:
    """About ``count`` entries of ``idx`` spread evenly through it."""
    if idx.size <= count:
        return idx
    return idx[np.linspace(0, idx.size - 1, count).round().astype(int)]


@dataclass
class _RowSelection:
    rows: dict

    @classmethod
    def seed(cls, prep: Prepared, count: int) -> "_RowSelection":
        rows = {}
        for fam, (label, _, _) in FAMILIES.items():
            inside, outside = prep.partitions[label]
            rows[fam] = (_spread(np.asarray(inside), count), _spread(np.asarray(outside), count))
        if prep.residual_field is not None:
            rows["resid"] = _spread(np.arange(len(prep.residual_field)), count)
        return cls(rows)

    def size(self) -> int:
        return sum(len(v) if k == "resid" else len(v[0]) + len(v[1]) for k, v in self.rows.items())


def _most_violated(idx: np.ndarray, excess: np.ndarray, tol: float, chosen: np.ndarray, batch: int):
    bad = excess > tol
    bad &= ~np.isin(idx, chosen)
    if not np.any(bad):
        return idx[:0]
    cand, ex = idx[bad], excess[bad]
    return cand[np.argsort(-ex, kind="stable")[:batch]]


def _violations(prep: Prepared, sol: LPSolution, sel: _RowSelection, tol: float, batch: int):
    """Rows of the full LP violated by ``sol``; returns (additions, worst excess)."""
    basis, lattice = prep.basis, prep.lattice
    b = sol.x[:basis.dim]
    H = prep.transfer.H
    values = lattice_eval(np.stack([b, (H - np.eye(basis.dim)) @ b]), basis, lattice)
    fields = {"init": values[0], "unsafe": values[0], "pos": values[0], "kush": values[1]}
    names = set(sol.var_names)
    adds, worst = {}, 0.0
    for fam, (label, _, _) in FAMILIES.items():
        inside, outside = (np.asarray(p) for p in prep.partitions[label])
        v = fields[fam]
        new = []
        for idx, lo_name, hi_name, chosen in ((inside, f"{fam}_lo", f"{fam}_hi", sel.rows[fam][0]),
                                              (outside, f"{fam}_olo", f"{fam}_ohi", sel.rows[fam][1])):
            if hi_name not in names or idx.size == 0:
                new.append(idx[:0])
                continue
            over = v[idx] - sol.value(hi_name)
            under = sol.value(lo_name) - v[idx]
            worst = max(worst, float(over.max()), float(under.max()))
            new.append(np.union1d(_most_violated(idx, over, tol, chosen, batch),
                                  _most_violated(idx, under, tol, chosen, batch)))
        adds[fam] = tuple(new)
    if prep.residual_field is not None and "s_res" in names:
        idx = np.arange(len(prep.residual_field))
        excess = prep.residual_field @ b - sol.value("s_res")
        worst = max(worst, float(excess.max()))
        adds["resid"] = _most_violated(idx, excess, tol, sel.rows["resid"], batch)
    return adds, worst


def solve_certificate_lp(spec: ProblemSpec, prep: Prepared, settings: SynthesisSettings,
                         selection: _RowSelection | None = None):
    """Solve the full certificate LP; returns (solution, last model, stats).

    With row generation the returned model is the final relaxation, whose
    solution satisfies every row of the full LP within the tolerance.
    """
    if not settings.row_generation:
        model = assemble(spec, prep.basis, prep.transfer, prep.lattice, prep.partitions,
                         prep.tightening, prep.residual_field)
        sol = _solve(model, settings)
        return sol, model, {"rounds": 1, "active_rows": model.n_rows, "selection": None}
    sel = selection or _RowSelection.seed(prep, settings.generation_seed_rows)
    tol = 0.5 * settings.tolerance
    iterations = 0
    rounds = 0
    while True:
        rounds += 1
        model = assemble(spec, prep.basis, prep.transfer, prep.lattice, prep.partitions,
                         prep.tightening, prep.residual_field, select=sel.rows)
        sol = _solve(model, settings)
        iterations += sol.iterations
        if sol.status != "optimal":
            break
        adds, worst = _violations(prep, sol, sel, tol, settings.generation_batch)
        if worst <= tol:
            break
        grew = False
        for key, extra in adds.items():
            if key == "resid":
                if extra.size:
                    sel.rows[key] = np.union1d(sel.rows[key], extra)
                    grew = True
            else:
                ins, outs = sel.rows[key]
                if extra[0].size or extra[1].size:
                    sel.rows[key] = (np.union1d(ins, extra[0]), np.union1d(outs, extra[1]))
                    grew = True
        if not grew:
            raise CertificationError(f"row generation stalled with violation {worst:.3e}")
    sol.iterations = iterations
    return sol, model, {"rounds": rounds, "active_rows": model.n_rows, "selection": sel}


def synthesize(problem: ProblemSpec, settings: SynthesisSettings, data: SampleSet,
               kernel_in: KernelParams, kernel_out: KernelParams, seed: int | None = None,
               prepared: Prepared | None = None, config_hash: str | None = None) -> Certificate:
    """Synthesize a certificate for ``problem`` from ``data``."""
    prep = prepared or prepare(problem, settings, data, kernel_in, kernel_out)
    cap = problem.norm_cap
    history = []
    selection = None
    for attempt in range(settings.norm_retries + 1):
        spec = replace(problem, norm_cap=cap)
        t0 = time.perf_counter()
        sol, model, stats = solve_certificate_lp(spec, prep, settings, selection)
        t_lp = time.perf_counter() - t0
        selection = stats["selection"]
        if sol.status == "infeasible":
            raise CertificationError(
                "the LP is infeasible: no barrier in this basis meets the tightened conditions; "
                "raise m_per_axis or oversample, or lower epsilon",
                family=infeasible_family(spec, prep, settings, selection))
        if sol.status != "optimal":
            raise CertificationError(f"LP solver stopped with status {sol.status}: {sol.message}")
        b = sol.x[:prep.basis.dim]
        norm = float(np.linalg.norm(b))
        history.append({"norm_cap": cap, "norm": norm, "objective": sol.objective})
        if norm <= cap:
            break
        cap *= 2.0
    else:
        raise CertificationError(f"barrier norm {norm:.4g} still exceeds the cap after "
                                 f"{settings.norm_retries} doublings")
    eta = float(np.clip(sol.value("eta"), 0.0, None))
    c = float(max(sol.value("c"), 0.0))
    p = safety_probability(min(eta, 1.0 - 1e-15), c, problem.horizon)
    n_resid = 0 if prep.residual_field is None else len(prep.residual_field)
    diagnostics = {
        "transfer_residual": prep.transfer.residual,
        "transfer_method": prep.transfer.method,
        "residual_points": int(prep.residual_points.shape[0]),
        "residual_slack": float(sol.value("s_res")) if "s_res" in model.var_names else 0.0,
        "lp_rows": expected_row_count(prep.partitions, prep.tightening, prep.lattice.size, n_resid),
        "lp_active_rows": model.n_rows, "lp_columns": model.n_vars,
        "lp_rounds": stats["rounds"],
        "lp_iterations": sol.iterations, "lp_max_residual": sol.max_residual,
        "norm_history": history,
        "timings": {**prep.timings, "solve": t_lp},
        "lattice_resolution": prep.lattice.resolution,
        "extrapolated_points": int(len(prep.partitions["domain"][1])),
    }
    provenance = {"dataset_sha256": data.digest(), "seed": seed, "config_sha256": config_hash,
                  "settings": _settings_dict(settings)}
    return Certificate(prep.basis, b, eta, c, problem.epsilon, cap, problem.kappa, problem.horizon, p,
                       kernel_in, kernel_out, settings.regularization, problem.domain,
                       problem.initial, problem.unsafe, prep.tightening, provenance, diagnostics)


def _settings_dict(settings: SynthesisSettings) -> dict:
    d = asdict(settings)
    return d


def infeasible_family(problem: ProblemSpec, prep: Prepared, settings: SynthesisSettings,
                      selection: _RowSelection | None = None) -> str:
    """Name the family whose removal restores feasibility first (diagnostic only).

    With a row ``selection`` the test runs on that relaxation of the LP.
    """
    model = assemble(problem, prep.basis, prep.transfer, prep.lattice, prep.partitions,
                     prep.tightening, prep.residual_field,
                     select=selection.rows if selection is not None else None)
    for fam in ("unsafe", "init", "kush", "pos"):
        keep = np.array([r not in (f"{fam}_bound", f"{fam}_bound_alt") for r in model.row_names])
        sub = LPModel(model.var_names, model.objective, model.matrix[keep], model.senses[keep],
                      model.rhs[keep], model.lower, model.upper,
                      [r for r, k in zip(model.row_names, keep) if k])
        try:
            if _solve(sub, settings).status == "optimal":
                return fam
        except Exception:  # diagnostics must never mask the original failure
            continue
    return "unknown"


# --------------------------------------------------------------------------- checking


@dataclass(frozen=True)
class AuditSettings:
    """Audit grid and tolerance.

    ``refine`` is the per-axis refinement over the bound lattice spacing; the
    default gives at least ten times the lattice point density.
    """

    refine: int | None = None
    tolerance: float = 1e-4
    chunk: int = 20_000


@dataclass
class ValidationReport:
    residuals: dict
    points: dict
    passed: dict
    tolerance: float
    monte_carlo: dict | None = None

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {"residuals": self.residuals, "points": self.points, "passed": self.passed,
                "tolerance": self.tolerance, "ok": self.ok, "monte_carlo": self.monte_carlo}


def audit_refine(n: int) -> int:
    return max(2, math.ceil(10.0 ** (1.0 / n)))


def check_certificate(cert: Certificate, model: CMEModel, audit: AuditSettings | None = None,
                      workers: int = 1) -> ValidationReport:
    """Evaluate each certificate condition with exact CME weights on a dense grid.

    Grid chunks are evaluated by up to ``workers`` threads; the worst cases are
    maxima, so the report does not depend on the worker count.

    Residuals are signed worst cases (positive means violated):
    ``init = max(B - eta)`` on X0, ``unsafe = max(1 - B)`` on Xu,
    ``kushner = max(w^T B(X+) - B - (c - eps Bbar kappa))`` and
    ``positivity = max(-B)`` on X.
    """
    audit = audit or AuditSettings()
    if not _same_kernel(cert.kernel_in, model.kernel_in) or not _same_kernel(cert.kernel_out, model.kernel_out):
        raise CertificationError("certificate and CME model use different kernel parameters")
    if model.samples.n != cert.domain.n:
        raise CertificationError("dataset dimension does not match the certificate")
    basis = cert.basis
    q = cert.tightening.resolution
    refine = audit.refine or audit_refine(basis.n)
    spacing = basis.periodic_domain.width / q / refine
    dom = domain_region(cert.domain)
    grids = {
        "init": region_grid(cert.initial, spacing, within=cert.domain),
        "unsafe": region_grid(cert.unsafe, spacing, within=cert.domain),
        "domain": region_grid(dom, spacing),
    }
    b = cert.b
    residuals, counts = {}, {}
    bx0 = barrier_eval(b, basis, grids["init"]) if len(grids["init"]) else np.empty(0)
    bxu = barrier_eval(b, basis, grids["unsafe"]) if len(grids["unsafe"]) else np.empty(0)
    residuals["init"] = float(np.max(bx0 - cert.eta, initial=-np.inf))
    residuals["unsafe"] = float(np.max(1.0 - bxu, initial=-np.inf))
    counts["init"], counts["unsafe"] = len(bx0), len(bxu)

    target = cert.c - cert.epsilon * cert.norm_cap * cert.kappa
    succ_vals = barrier_eval(b, basis, model.samples.successors)
    v = model.solve(succ_vals)
    pts = grids["domain"]

    def worst(start):
        chunk = pts[start:start + audit.chunk]
        bx = barrier_eval(b, basis, chunk)
        expected = sqexp_matrix(chunk, model.samples.states, model.kernel_in) @ v
        return float(np.max(expected - bx - target)), float(np.max(-bx))

    starts = range(0, pts.shape[0], audit.chunk)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(worst, starts))
    else:
        parts = [worst(s) for s in starts]
    worst_k = max((k for k, _ in parts), default=-np.inf)
    worst_p = max((q for _, q in parts), default=-np.inf)
    residuals["kushner"] = worst_k
    residuals["positivity"] = worst_p
    counts["kushner"] = counts["positivity"] = int(pts.shape[0])
    passed = {k: bool(r <= audit.tolerance) for k, r in residuals.items()}
    return ValidationReport(residuals, counts, passed, audit.tolerance)


def _same_kernel(a: KernelParams, b: KernelParams) -> bool:
    return a.lengthscales.shape == b.lengthscales.shape and np.allclose(
        a.lengthscales, b.lengthscales, rtol=1e-12, atol=0) and math.isclose(a.amplitude, b.amplitude, rel_tol=1e-12)


# --------------------------------------------------------------------------- Monte Carlo


@dataclass
class MonteCarloResult:
    """Safe fraction with a two-sided Chebyshev interval.

    For a region of initial states, ``estimate`` is the minimum over the grid
    of starting points and ``worst_state`` the start that attains it.
    """

    estimate: float
    half_width: float
    runs: int
    confidence: float
    worst_state: list | None = None
    starts: int = 1

    @property
    def lower(self) -> float:
        return max(0.0, self.estimate - self.half_width)

    @property
    def upper(self) -> float:
        return min(1.0, self.estimate + self.half_width)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "half_width": self.half_width, "lower": self.lower,
                "upper": self.upper, "runs": self.runs, "confidence": self.confidence,
                "worst_state": self.worst_state, "starts": self.starts}


def chebyshev_half_width(p: float, runs: int, confidence: float) -> float:
    return math.sqrt(p * (1.0 - p) / (runs * (1.0 - confidence)))


def monte_carlo(spec: SystemSpec, init, T: int, runs: int, confidence: float, rng: np.random.Generator,
                unsafe: Region | None, grid_points: int = 64, batch: int = 200_000) -> MonteCarloResult:
    """Estimate the probability of staying out of ``unsafe`` for ``T`` steps.

    ``init`` is either a fixed state or a :class:`Region`; for a region,
    ``runs`` rollouts start from each of about ``grid_points`` grid states
    and the worst start is reported.
    """
    if int(runs) != runs or runs < 1:
        raise ValueError("runs must be a positive integer")
    if not (0.0 < confidence < 1.0):
        raise ValueError("confidence must lie strictly between 0 and 1")
    if isinstance(init, Region):
        starts = _init_grid(init, grid_points)
    else:
        starts = np.atleast_2d(np.asarray(init, dtype=float))
    rates = np.empty(starts.shape[0])
    per_batch = max(1, batch // runs)
    for s in range(0, starts.shape[0], per_batch):
        block = starts[s:s + per_batch]
        x0 = np.repeat(block, runs, axis=0)
        safe = batch_rollout(spec, x0, T, unsafe, rng)
        rates[s:s + per_batch] = safe.reshape(block.shape[0], runs).mean(axis=1)
    k = int(np.argmin(rates))
    p = float(rates[k])
    return MonteCarloResult(p, chebyshev_half_width(p, int(runs), confidence), int(runs), confidence,
                            starts[k].tolist(), int(starts.shape[0]))


def _init_grid(region: Region, count: int) -> np.ndarray:
    lo, hi = region.bbox()
    n = lo.size
    per = max(2, int(round(count ** (1.0 / n))))
    while True:
        axes = [np.linspace(lo[i], hi[i], per) for i in range(n)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        pts = pts[region.contains(pts)]
        if pts.shape[0] >= min(count, 4) or per > 64:
            return pts if pts.shape[0] else np.atleast_2d(0.5 * (lo + hi))
        per *= 2


# --------------------------------------------------------------------------- export


def barrier_surface(cert: Certificate, resolution: int, fixed: dict | None = None,
                    axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Rows ``(x_a, x_b, B, level)`` on a 2-D slice.

    ``fixed`` maps each remaining axis index to its value. ``level`` is 1 where
    ``B >= 1``, -1 where ``B <= eta`` and 0 otherwise.
    """
    n = cert.domain.n
    fixed = dict(fixed or {})
    a, b_ax = axes
    if a == b_ax or not (0 <= a < n and 0 <= b_ax < n):
        raise ValueError("slice axes must be two distinct coordinates")
    missing = [i for i in range(n) if i not in (a, b_ax) and i not in fixed]
    if missing:
        raise ValueError(f"slice must fix coordinates {missing}")
    extra = [i for i in fixed if i in (a, b_ax) or not 0 <= i < n]
    if extra:
        raise ValueError(f"invalid fixed coordinates {extra}")
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    g1 = np.linspace(cert.domain.lower[a], cert.domain.upper[a], resolution)
    g2 = np.linspace(cert.domain.lower[b_ax], cert.domain.upper[b_ax], resolution)
    m1, m2 = np.meshgrid(g1, g2, indexing="ij")
    pts = np.zeros((m1.size, n))
    pts[:, a] = m1.ravel()
    pts[:, b_ax] = m2.ravel()
    for i, v in fixed.items():
        pts[:, i] = v
    vals = barrier_eval(cert.b, cert.basis, pts)
    level = np.where(vals >= 1.0, 1, np.where(vals <= cert.eta, -1, 0))
    return np.column_stack([pts[:, a], pts[:, b_ax], vals, level])


def surface_csv(rows: np.ndarray, names=("x1", "x2")) -> str:
    lines = [f"{names[0]},{names[1]},B,level"]
    for r in rows:
        lines.append(f"{float(r[0])!r},{float(r[1])!r},{float(r[2])!r},{int(r[3])}")
    return "\n".join(lines) + "\n"
