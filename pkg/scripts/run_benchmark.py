"""Synthesize, audit and Monte-Carlo validate a benchmark over several seeds.

Usage::

    python scripts/run_benchmark.py configs/barr3.toml --seeds 0 1 2 3 4
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import replace

from fourier_cbc.certify import (CertificationError, check_certificate,
                                 monte_carlo, synthesize)
from fourier_cbc.config import load_config
from fourier_cbc.kernels import fit_cme
from fourier_cbc.systems import generate_dataset, make_rng


def run_seed(cfg, seed: int, runs: int | None = None, audit_refine: int | None = None) -> dict:
    """One synthesis, audit and Monte-Carlo pass; returns a summary record."""
    t0 = time.perf_counter()
    spec = cfg.system_spec()
    data = generate_dataset(spec, cfg.system.samples, seed)
    kin, kout = cfg.kernels(data)
    problem = cfg.problem_spec(kin)
    try:
        cert = synthesize(problem, cfg.settings(), data, kin, kout, seed=seed, config_hash=cfg.digest)
    except CertificationError as exc:
        return {"seed": seed, "status": "infeasible", "message": str(exc),
                "seconds": time.perf_counter() - t0}
    audit = cfg.audit_settings()
    if audit_refine is not None:
        audit = replace(audit, refine=audit_refine)
    report = check_certificate(cert, fit_cme(data, kin, kout, cert.regularization), audit)
    initial, unsafe = cfg.regions()
    start = cfg.montecarlo.initial_state if cfg.montecarlo.initial_state is not None else initial
    mc = monte_carlo(spec, start, problem.horizon, runs or cfg.montecarlo.runs, cfg.montecarlo.confidence,
                     make_rng(seed, "montecarlo"), unsafe, cfg.montecarlo.grid_points)
    return {"seed": seed, "status": "ok", "eta": cert.eta, "c": cert.c, "p_N": cert.probability,
            "norm_b": cert.norm, "check_ok": report.ok, "residuals": report.residuals,
            "mc_estimate": mc.estimate, "mc_lower": mc.lower,
            "mc_consistent": mc.lower >= cert.probability - 0.02,
            "seconds": time.perf_counter() - t0}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--runs", type=int, help="Monte-Carlo runs (default: from the config)")
    ap.add_argument("--out", help="write the records as JSON")
    args = ap.parse_args(argv)
    cfg = load_config(args.config)
    records = []
    for seed in args.seeds:
        r = run_seed(cfg, seed, args.runs)
        records.append(r)
        if r["status"] != "ok":
            print(f"seed {seed}: infeasible ({r['seconds']:.1f}s)", flush=True)
            continue
        print(f"seed {seed}: p_N {r['p_N']:.4f} (eta {r['eta']:.4f}, c {r['c']:.4f})  "
              f"check {'PASS' if r['check_ok'] else 'FAIL'}  "
              f"MC {r['mc_estimate']:.4f} lower {r['mc_lower']:.4f}  {r['seconds']:.1f}s", flush=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(records, fh, indent=1)
    return 0 if all(r["status"] == "ok" and r["check_ok"] and r["mc_consistent"] for r in records) else 1


if __name__ == "__main__":
    raise SystemExit(main())
