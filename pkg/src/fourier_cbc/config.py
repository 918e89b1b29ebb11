"""TOML run configuration.

A run is described by one document with the sections ``system``,
``kernel``, ``basis``, ``problem``, ``solver``, ``audit`` and ``montecarlo``
plus a top-level ``seed``. Every section except ``system`` and ``problem`` is
optional. Unknown keys and ill-typed values are rejected with the line they
appear on. Relative paths (the Dubins controller) resolve against the
directory holding the config file.
"""

from __future__ import annotations

import hashlib
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import SearchConfig
from .certify import AuditSettings, SynthesisSettings
from .geometry import Domain, GeometryError, Region, region_from_dict
from .kernels import KernelParams, SampleSet, median_heuristic
from .lp import ProblemSpec
from .systems import MLP, SystemSpec, SystemSpecError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; the message carries the file and line."""


SYSTEM_DEFAULTS = {
    "barr3": {"step_size": 0.1, "noise": [0.1, 0.1]},
    "dubins": {"step_size": 0.5, "noise": [0.01, 0.01, 0.001]},
    "user-map": {"step_size": 1.0, "noise": None},
}


@dataclass(frozen=True)
class SystemSection:
    kind: str
    lower: tuple
    upper: tuple
    step_size: float
    noise: tuple
    samples: int = 1000
    velocity: float = 1.0
    controller: str | None = None
    command: str | None = None


@dataclass(frozen=True)
class KernelSection:
    """Lengthscales are a tuple or ``"auto"`` (median heuristic on the data)."""

    input_sigma_f: float = 1.0
    input_lengthscales: tuple | str = "auto"
    output_sigma_f: float = 1.0
    output_lengthscales: tuple | str = "auto"
    regularization: float = 1e-5


@dataclass(frozen=True)
class BasisSection:
    m_per_axis: int = 4
    oversample: int = 8
    fit_oversample: int = 4
    projection: str = "lstsq"
    max_dilation: float = 2.0 * math.pi
    residual_refine: int = 2


@dataclass(frozen=True)
class ProblemSection:
    initial: dict
    unsafe: dict
    horizon: int = 5
    epsilon: float = 0.0
    norm_cap: float = 1.0
    inflation: float = 0.02
    margin: float = 1.5


@dataclass(frozen=True)
class SolverSection:
    tolerance: float = 1e-8
    iteration_cap: int = 200_000
    backend: str | None = None
    norm_retries: int = 6
    row_generation: bool = True


@dataclass(frozen=True)
class AuditSection:
    refine: int | None = None
    tolerance: float = 1e-4


@dataclass(frozen=True)
class MonteCarloSection:
    runs: int = 10_000
    confidence: float = 0.9
    initial_state: tuple | None = None
    grid_points: int = 64


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration; see the module docstring for the layout."""

    system: SystemSection
    problem: ProblemSection
    kernel: KernelSection = field(default_factory=KernelSection)
    basis: BasisSection = field(default_factory=BasisSection)
    solver: SolverSection = field(default_factory=SolverSection)
    audit: AuditSection = field(default_factory=AuditSection)
    montecarlo: MonteCarloSection = field(default_factory=MonteCarloSection)
    seed: int = 0
    base_dir: str = "."
    digest: str = ""

    # ----------------------------------------------------------------- builders

    @property
    def domain(self) -> Domain:
        return Domain(self.system.lower, self.system.upper)

    def system_spec(self) -> SystemSpec:
        s = self.system
        controller = None
        if s.controller:
            path = Path(s.controller)
            if not path.is_absolute():
                path = Path(self.base_dir) / path
            try:
                controller = MLP.load(path)
            except OSError as exc:
                raise ConfigError(f"cannot read controller {str(path)!r}: {exc.strerror}") from None
        try:
            return SystemSpec(s.kind, s.step_size, np.asarray(s.noise, dtype=float), self.domain,
                              controller, s.velocity, s.command)
        except SystemSpecError as exc:
            raise ConfigError(f"[system] {exc}") from None

    def kernels(self, data: SampleSet) -> tuple[KernelParams, KernelParams]:
        """Input and output kernels, resolving ``"auto"`` lengthscales from ``data``."""
        k = self.kernel
        li = median_heuristic(data.states) if k.input_lengthscales == "auto" else k.input_lengthscales
        lo = median_heuristic(data.successors) if k.output_lengthscales == "auto" else k.output_lengthscales
        n = self.domain.n
        for name, ls in (("input", li), ("output", lo)):
            if len(ls) != n:
                raise ConfigError(f"[kernel] {name} lengthscales have {len(ls)} entries, domain has {n} axes")
        return KernelParams(k.input_sigma_f**2, li), KernelParams(k.output_sigma_f**2, lo)

    def regions(self) -> tuple[Region, Region]:
        out = []
        for name, d in (("initial", self.problem.initial), ("unsafe", self.problem.unsafe)):
            try:
                region = region_from_dict(d)
            except (GeometryError, KeyError, TypeError) as exc:
                raise ConfigError(f"[problem.{name}] invalid region: {exc}") from None
            if region.n != self.domain.n:
                raise ConfigError(f"[problem.{name}] region has {region.n} axes, domain has {self.domain.n}")
            out.append(region)
        return out[0], out[1]

    def problem_spec(self, kernel_in: KernelParams, epsilon: float | None = None) -> ProblemSpec:
        """Safety problem with ``kappa`` set to the input kernel's ``sigma_f``."""
        initial, unsafe = self.regions()
        p = self.problem
        return ProblemSpec(self.domain, initial, unsafe, p.horizon,
                           p.epsilon if epsilon is None else float(epsilon), p.norm_cap, kernel_in.sigma_f)

    def settings(self) -> SynthesisSettings:
        b, s, p = self.basis, self.solver, self.problem
        return SynthesisSettings(
            m_per_axis=b.m_per_axis, oversample=b.oversample, fit_oversample=b.fit_oversample,
            projection=b.projection, inflation=p.inflation, margin=p.margin,
            max_dilation=b.max_dilation, residual_refine=b.residual_refine,
            regularization=self.kernel.regularization, tolerance=s.tolerance,
            iteration_cap=s.iteration_cap, backend=s.backend, norm_retries=s.norm_retries,
            row_generation=s.row_generation, search=SearchConfig())

    def audit_settings(self) -> AuditSettings:
        return AuditSettings(refine=self.audit.refine, tolerance=self.audit.tolerance)


# --------------------------------------------------------------------------- parsing


_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-\" ]+?)\s*\]\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-\"]+(?:\s*\.\s*[A-Za-z0-9_\-\"]+)*)\s*=")


def key_lines(text: str) -> dict[str, int]:
    """Map dotted key paths (and table headers) to their 1-based line numbers.

    Keys inside inline tables or arrays are not listed; lookups fall back to
    the nearest listed parent.
    """
    lines: dict[str, int] = {}
    prefix = ""
    depth = 0
    for k, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0] if '"' not in line else line
        if depth == 0:
            m = _HEADER.match(line)
            if m:
                prefix = ".".join(p.strip().strip('"') for p in m.group(1).split("."))
                lines.setdefault(prefix, k)
                continue
            m = _KEY.match(line)
            if m:
                key = ".".join(p.strip().strip('"') for p in m.group(1).split("."))
                lines.setdefault(f"{prefix}.{key}" if prefix else key, k)
        depth += stripped.count("[") + stripped.count("{") - stripped.count("]") - stripped.count("}")
        depth = max(depth, 0)
    return lines


class _Reader:
    def __init__(self, source: str, lines: dict):
        self.source = source
        self.lines = lines

    def line(self, path: str) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rpartition(".")[0]
        return None

    def fail(self, path: str, message: str):
        ln = self.line(path)
        where = f"{self.source}:{ln}" if ln else self.source
        raise ConfigError(f"{where}: {path}: {message}")

    def table(self, doc: dict, path: str, allowed: set, required: bool = False) -> dict:
        value = doc.get(path.rpartition(".")[2])
        if value is None:
            if required:
                self.fail(path, "missing required section")
            return {}
        if not isinstance(value, dict):
            self.fail(path, "must be a table")
        for key in value:
            if key not in allowed:
                self.fail(f"{path}.{key}", f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return value

    def number(self, t: dict, path: str, default=None, *, integer=False, positive=False,
               nonnegative=False, low=None, high=None):
        key = path.rpartition(".")[2]
        if key not in t:
            if default is None:
                self.fail(path, "missing required value")
            return default
        v = t[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {type(v).__name__}")
        if integer and (not isinstance(v, int)):
            self.fail(path, "expected an integer")
        if not math.isfinite(v):
            self.fail(path, "must be finite")
        if positive and v <= 0:
            self.fail(path, "must be positive")
        if nonnegative and v < 0:
            self.fail(path, "must be nonnegative")
        if low is not None and v < low:
            self.fail(path, f"must be >= {low}")
        if high is not None and v > high:
            self.fail(path, f"must be <= {high}")
        return int(v) if integer else float(v)

    def vector(self, t: dict, path: str, default=None, *, length=None, positive=False):
        key = path.rpartition(".")[2]
        if key not in t:
            if default is None:
                self.fail(path, "missing required value")
            return default
        v = t[key]
        if not isinstance(v, list) or not v or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
            self.fail(path, "expected a non-empty array of numbers")
        if not all(math.isfinite(x) for x in v):
            self.fail(path, "entries must be finite")
        if length is not None and len(v) != length:
            self.fail(path, f"expected {length} entries, got {len(v)}")
        if positive and any(x <= 0 for x in v):
            self.fail(path, "entries must be positive")
        return tuple(float(x) for x in v)

    def string(self, t: dict, path: str, default=None, choices=None):
        key = path.rpartition(".")[2]
        if key not in t:
            return default
        v = t[key]
        if not isinstance(v, str):
            self.fail(path, "expected a string")
        if choices is not None and v not in choices:
            self.fail(path, f"must be one of {', '.join(choices)}")
        return v

    def boolean(self, t: dict, path: str, default: bool):
        key = path.rpartition(".")[2]
        if key not in t:
            return default
        if not isinstance(t[key], bool):
            self.fail(path, "expected true or false")
        return t[key]

    def region(self, d, path: str, n: int) -> dict:
        if not isinstance(d, dict):
            self.fail(path, "region must be a table")
        kind = d.get("type")
        allowed = {"box": {"type", "lower", "upper"}, "ball": {"type", "center", "radius"},
                   "union": {"type", "members"}}
        if kind not in allowed:
            self.fail(f"{path}.type", "must be 'box', 'ball' or 'union'")
        for key in d:
            if key not in allowed[kind]:
                self.fail(f"{path}.{key}", f"unknown key for a {kind} region")
        if kind == "box":
            lo = self.vector(d, f"{path}.lower", length=n)
            hi = self.vector(d, f"{path}.upper", length=n)
            if any(a >= b for a, b in zip(lo, hi)):
                self.fail(path, "box lower bounds must be below upper bounds")
            return {"type": "box", "lower": list(lo), "upper": list(hi)}
        if kind == "ball":
            c = self.vector(d, f"{path}.center", length=n)
            r = self.number(d, f"{path}.radius", positive=True)
            return {"type": "ball", "center": list(c), "radius": r}
        members = d.get("members")
        if not isinstance(members, list) or not members:
            self.fail(f"{path}.members", "expected a non-empty array of regions")
        return {"type": "union", "members": [self.region(m, f"{path}.members", n) for m in members]}


def parse_config(text: str, source: str = "<config>", base_dir: str = ".") -> RunConfig:
    """Parse a TOML document into a :class:`RunConfig`."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: invalid TOML: {exc}") from None
    r = _Reader(source, key_lines(text))
    top = {"seed", "system", "kernel", "basis", "problem", "solver", "audit", "montecarlo"}
    for key in doc:
        if key not in top:
            r.fail(key, f"unknown key (allowed: {', '.join(sorted(top))})")
    seed = r.number(doc, "seed", 0, integer=True, nonnegative=True)

    t = r.table(doc, "system", {"kind", "lower", "upper", "step_size", "noise", "samples",
                                "velocity", "controller", "command"}, required=True)
    kind = r.string(t, "system.kind", None, tuple(SYSTEM_DEFAULTS))
    if kind is None:
        r.fail("system.kind", "missing required value")
    lower = r.vector(t, "system.lower")
    upper = r.vector(t, "system.upper", length=len(lower))
    if any(a >= b for a, b in zip(lower, upper)):
        r.fail("system.upper", "domain upper bounds must exceed lower bounds")
    n = len(lower)
    defaults = SYSTEM_DEFAULTS[kind]
    noise = r.vector(t, "system.noise", tuple(defaults["noise"]) if defaults["noise"] else None)
    if len(noise) not in (1, n) or any(x < 0 for x in noise):
        r.fail("system.noise", f"expected 1 or {n} nonnegative standard deviations")
    system = SystemSection(
        kind=kind, lower=lower, upper=upper,
        step_size=r.number(t, "system.step_size", defaults["step_size"], positive=True),
        noise=noise,
        samples=r.number(t, "system.samples", 1000, integer=True, positive=True),
        velocity=r.number(t, "system.velocity", 1.0),
        controller=r.string(t, "system.controller"),
        command=r.string(t, "system.command"),
    )
    if kind == "user-map" and not system.command:
        r.fail("system.command", "user-map systems need a command")

    t = r.table(doc, "kernel", {"input", "output", "regularization"})
    ks = {}
    for side in ("input", "output"):
        sub = t.get(side, {})
        if not isinstance(sub, dict):
            r.fail(f"kernel.{side}", "must be a table")
        for key in sub:
            if key not in ("sigma_f", "lengthscales"):
                r.fail(f"kernel.{side}.{key}", "unknown key (allowed: lengthscales, sigma_f)")
        ks[f"{side}_sigma_f"] = r.number(sub, f"kernel.{side}.sigma_f", 1.0, positive=True)
        ls = sub.get("lengthscales", "auto")
        if ls != "auto":
            ls = r.vector(sub, f"kernel.{side}.lengthscales", length=n, positive=True)
        ks[f"{side}_lengthscales"] = ls
    kernel = KernelSection(**ks, regularization=r.number(t, "kernel.regularization", 1e-5, positive=True))

    t = r.table(doc, "basis", {"m_per_axis", "oversample", "fit_oversample", "projection",
                               "max_dilation", "residual_refine"})
    basis = BasisSection(
        m_per_axis=r.number(t, "basis.m_per_axis", 4, integer=True, low=1),
        oversample=r.number(t, "basis.oversample", 8, integer=True, low=1),
        fit_oversample=r.number(t, "basis.fit_oversample", 4, integer=True, low=1),
        projection=r.string(t, "basis.projection", "lstsq", ("lstsq", "fft")),
        max_dilation=r.number(t, "basis.max_dilation", 2.0 * math.pi, positive=True),
        residual_refine=r.number(t, "basis.residual_refine", 2, integer=True, nonnegative=True),
    )

    t = r.table(doc, "problem", {"initial", "unsafe", "horizon", "epsilon", "norm_cap",
                                 "inflation", "margin"}, required=True)
    for name in ("initial", "unsafe"):
        if name not in t:
            r.fail(f"problem.{name}", "missing required region")
    problem = ProblemSection(
        initial=r.region(t["initial"], "problem.initial", n),
        unsafe=r.region(t["unsafe"], "problem.unsafe", n),
        horizon=r.number(t, "problem.horizon", 5, integer=True, low=1),
        epsilon=r.number(t, "problem.epsilon", 0.0, nonnegative=True),
        norm_cap=r.number(t, "problem.norm_cap", 1.0, positive=True),
        inflation=r.number(t, "problem.inflation", 0.02, nonnegative=True),
        margin=r.number(t, "problem.margin", 1.5, nonnegative=True),
    )

    t = r.table(doc, "solver", {"tolerance", "iteration_cap", "backend", "norm_retries", "row_generation"})
    solver = SolverSection(
        tolerance=r.number(t, "solver.tolerance", 1e-8, positive=True),
        iteration_cap=r.number(t, "solver.iteration_cap", 200_000, integer=True, low=1),
        backend=r.string(t, "solver.backend") or None,
        norm_retries=r.number(t, "solver.norm_retries", 6, integer=True, nonnegative=True),
        row_generation=r.boolean(t, "solver.row_generation", True),
    )

    t = r.table(doc, "audit", {"refine", "tolerance"})
    audit = AuditSection(
        refine=r.number(t, "audit.refine", None, integer=True, low=1) if "refine" in t else None,
        tolerance=r.number(t, "audit.tolerance", 1e-4, nonnegative=True),
    )

    t = r.table(doc, "montecarlo", {"runs", "confidence", "initial_state", "grid_points"})
    mc = MonteCarloSection(
        runs=r.number(t, "montecarlo.runs", 10_000, integer=True, low=1),
        confidence=r.number(t, "montecarlo.confidence", 0.9),
        initial_state=r.vector(t, "montecarlo.initial_state", length=n) if "initial_state" in t else None,
        grid_points=r.number(t, "montecarlo.grid_points", 64, integer=True, low=1),
    )
    if not 0.0 < mc.confidence < 1.0:
        r.fail("montecarlo.confidence", "must lie strictly between 0 and 1")

    cfg = RunConfig(system, problem, kernel, basis, solver, audit, mc, seed, base_dir,
                    hashlib.sha256(text.encode("utf-8")).hexdigest())
    cfg.regions()  # surface geometry errors at load time
    return cfg


def load_config(path) -> RunConfig:
    """Read and parse a TOML config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    return parse_config(text, str(path), str(path.parent))
