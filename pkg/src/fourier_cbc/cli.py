"""Command-line interface.

Subcommands::

    gen      sample a dataset from the configured system
    certify  synthesize a certificate from a dataset
    check    audit a certificate against the exact CME of a dataset
    mc       Monte-Carlo estimate of the safety probability
    export   barrier values on a 2-D grid as CSV

Exit codes: 0 success, 1 infeasible synthesis or failed check, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .certify import (Certificate, CertificationError, barrier_surface, check_certificate,
                      monte_carlo, surface_csv, synthesize)
from .config import ConfigError, RunConfig, load_config
from .geometry import GeometryError
from .kernels import KernelError, SampleSet, fit_cme
from .systems import SystemSpecError, generate_dataset, make_rng

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out(msg: str = "") -> None:
    print(msg, flush=True)


def _config(args) -> RunConfig:
    if not args.config:
        raise UsageError("--config is required for this command")
    return load_config(args.config)


def _seed(args, cfg: RunConfig | None) -> int:
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be nonnegative")
        return args.seed
    return cfg.seed if cfg is not None else 0


def _load_data(path, n: int | None = None) -> SampleSet:
    try:
        data = SampleSet.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read dataset {str(path)!r}: {exc.strerror}") from None
    if n is not None and data.n != n:
        raise UsageError(f"dataset has {data.n} coordinates, the configuration has {n}")
    return data


def _load_certificate(path) -> Certificate:
    try:
        return Certificate.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read certificate {str(path)!r}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, CertificationError) as exc:
        raise UsageError(f"malformed certificate {str(path)!r}: {exc}") from None


def _threads(args) -> int:
    t = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if t < 1:
        raise UsageError("--threads must be at least 1")
    return t


# --------------------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = _config(args)
    if not args.out:
        raise UsageError("gen needs --out")
    seed = _seed(args, cfg)
    data = generate_dataset(cfg.system_spec(), cfg.system.samples, seed)
    data.save(args.out)
    _out(f"N {data.N}")
    _out(f"seed {seed}")
    _out(f"domain lower {cfg.domain.lower.tolist()} upper {cfg.domain.upper.tolist()}")
    _out(f"wrote {args.out}")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    if args.data:
        data = _load_data(args.data, cfg.domain.n)
    else:
        data = generate_dataset(cfg.system_spec(), cfg.system.samples, seed)
    data.validate(cfg.domain)
    kin, kout = cfg.kernels(data)
    problem = cfg.problem_spec(kin)
    t0 = time.perf_counter()
    try:
        cert = synthesize(problem, cfg.settings(), data, kin, kout, seed=seed, config_hash=cfg.digest)
    except CertificationError as exc:
        fam = f" (binding family: {exc.family})" if exc.family else ""
        print(f"certification failed{fam}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    wall = time.perf_counter() - t0
    if args.out:
        cert.save(args.out)
    d = cert.diagnostics
    _out(f"eta {cert.eta:.6g}")
    _out(f"c {cert.c:.6g}")
    label = " (vacuous)" if cert.vacuous else ""
    _out(f"p_N {cert.probability:.6g}{label}")
    _out(f"infinite-horizon bound {cert.infinite_horizon_bound:.6g} (valid iff c = 0 exactly: "
         f"{'yes' if cert.c == 0.0 else 'no'})")
    _out(f"norm_b {cert.norm:.6g} (cap {cert.norm_cap:g})")
    _out(f"transfer residual {d['transfer_residual']:.3g}; residual slack {d['residual_slack']:.3g}")
    _out(f"lp rows {d['lp_rows']} (active {d['lp_active_rows']}, rounds {d['lp_rounds']}, "
         f"iterations {d['lp_iterations']})")
    _out("timings " + ", ".join(f"{k} {v:.2f}s" for k, v in d["timings"].items()) + f"; total {wall:.2f}s")
    if args.out:
        _out(f"wrote {args.out}")
    return EXIT_OK


def cmd_check(args) -> int:
    cert = _load_certificate(args.certificate)
    if not args.data:
        raise UsageError("check needs --data")
    data = _load_data(args.data, cert.domain.n)
    cfg = load_config(args.config) if args.config else None
    audit = cfg.audit_settings() if cfg else None
    kin, kout = cfg.kernels(data) if cfg else (cert.kernel_in, cert.kernel_out)
    model = fit_cme(data, kin, kout, cert.regularization)
    try:
        report = check_certificate(cert, model, audit, workers=_threads(args))
    except CertificationError as exc:
        raise UsageError(f"incompatible certificate and dataset: {exc}") from None
    doc = report.to_dict()
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    for fam, r in report.residuals.items():
        _out(f"{fam:10s} residual {r:+.3e} over {report.points[fam]} points  "
             f"{'pass' if report.passed[fam] else 'FAIL'}")
    _out("PASS" if report.ok else "FAIL")
    return EXIT_OK if report.ok else EXIT_FAILED


def cmd_mc(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    runs = args.runs if args.runs is not None else cfg.montecarlo.runs
    conf = args.confidence if args.confidence is not None else cfg.montecarlo.confidence
    if runs < 1:
        raise UsageError("--runs must be at least 1")
    if not 0.0 < conf < 1.0:
        raise UsageError("--confidence must lie strictly between 0 and 1")
    if runs == 1:
        print("warning: a single run gives a degenerate interval", file=sys.stderr)
    initial, unsafe = cfg.regions()
    start = cfg.montecarlo.initial_state if cfg.montecarlo.initial_state is not None else initial
    res = monte_carlo(cfg.system_spec(), start, cfg.problem.horizon, runs, conf,
                      make_rng(seed, "montecarlo"), unsafe, cfg.montecarlo.grid_points)
    _out(f"estimate {res.estimate:.6g}")
    _out(f"chebyshev interval [{res.lower:.6g}, {res.upper:.6g}] at confidence {conf:g} "
         f"({res.runs} runs per start, {res.starts} start(s), worst start {res.worst_state})")
    doc = res.to_dict()
    if args.certificate:
        cert = _load_certificate(args.certificate)
        consistent = res.lower >= cert.probability - 1e-12
        _out(f"certificate p_N {cert.probability:.6g}: "
             f"{'consistent' if consistent else 'INCONSISTENT'} with the interval")
        doc["certificate_probability"] = cert.probability
        doc["consistent"] = consistent
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return EXIT_OK


def _parse_slice(spec: str | None, n: int) -> tuple[tuple[int, int], dict]:
    """``"x3=0"`` or ``"3=0,4=1"`` fixes axes (1-based); the two free axes are plotted."""
    fixed = {}
    if spec:
        for part in spec.split(","):
            key, sep, val = part.partition("=")
            key = key.strip().lstrip("x")
            if not sep or not key.isdigit():
                raise UsageError(f"invalid slice entry {part!r}; use AXIS=VALUE with 1-based axes")
            axis = int(key) - 1
            if not 0 <= axis < n or axis in fixed:
                raise UsageError(f"invalid slice axis {part!r}")
            try:
                fixed[axis] = float(val)
            except ValueError:
                raise UsageError(f"invalid slice value {part!r}") from None
    free = [i for i in range(n) if i not in fixed]
    if len(free) != 2:
        raise UsageError(f"the slice must leave exactly two free axes (domain has {n}, fixed {len(fixed)})")
    return (free[0], free[1]), fixed


def cmd_export(args) -> int:
    cert = _load_certificate(args.certificate)
    if not args.out:
        raise UsageError("export needs --out")
    if args.resolution < 2:
        raise UsageError("--resolution must be at least 2")
    axes, fixed = _parse_slice(args.slice, cert.domain.n)
    rows = barrier_surface(cert, args.resolution, fixed, axes)
    Path(args.out).write_text(surface_csv(rows, (f"x{axes[0] + 1}", f"x{axes[1] + 1}")), encoding="utf-8")
    inside = int(np.sum(rows[:, 3] == 1))
    below = int(np.sum(rows[:, 3] == -1))
    _out(f"wrote {rows.shape[0]} rows to {args.out} ({inside} with B >= 1, {below} with B <= eta)")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fourier-cbc", description="Fourier barrier-certificate safety verifier")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--data", help="dataset CSV (x1..xn,xp1..xpn)")
    common.add_argument("--out", help="output file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="sample a dataset")
    sub.add_parser("certify", parents=[common], help="synthesize a certificate")
    p = sub.add_parser("check", parents=[common], help="audit a certificate")
    p.add_argument("certificate")
    p = sub.add_parser("mc", parents=[common], help="Monte-Carlo safety estimate")
    p.add_argument("certificate", nargs="?", help="certificate to compare against")
    p.add_argument("--runs", type=int)
    p.add_argument("--confidence", type=float)
    p = sub.add_parser("export", parents=[common], help="barrier surface CSV")
    p.add_argument("certificate")
    p.add_argument("--resolution", type=int, default=100, help="grid points per axis")
    p.add_argument("--slice", help="fixed coordinates for n > 2, e.g. x3=0")
    return ap


COMMANDS = {"gen": cmd_gen, "certify": cmd_certify, "check": cmd_check, "mc": cmd_mc, "export": cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, GeometryError, KernelError, SystemSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
