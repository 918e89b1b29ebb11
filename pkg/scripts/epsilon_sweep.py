"""Re-synthesize a certificate over a range of ambiguity radii.

The dataset, basis, transfer matrix and tightening coefficients do not depend
on epsilon, so they are prepared once and only the LP is re-solved.

Usage::

    python scripts/epsilon_sweep.py configs/dubins.toml --eps 0 0.005 0.01 0.02
"""

from __future__ import annotations

import argparse
import json

from fourier_cbc.certify import CertificationError, prepare, synthesize
from fourier_cbc.config import load_config
from fourier_cbc.systems import generate_dataset


def sweep(cfg, epsilons, seed=None):
    """Return one record per epsilon: eta, c, p_N and the barrier norm."""
    seed = cfg.seed if seed is None else seed
    data = generate_dataset(cfg.system_spec(), cfg.system.samples, seed)
    kin, kout = cfg.kernels(data)
    settings = cfg.settings()
    prep = prepare(cfg.problem_spec(kin, 0.0), settings, data, kin, kout)
    out = []
    for eps in epsilons:
        problem = cfg.problem_spec(kin, eps)
        try:
            cert = synthesize(problem, settings, data, kin, kout, seed=seed, prepared=prep)
        except CertificationError as exc:
            out.append({"epsilon": eps, "status": "infeasible", "message": str(exc)})
            continue
        out.append({"epsilon": eps, "status": "ok", "eta": cert.eta, "c": cert.c,
                    "p_N": cert.probability, "norm_b": cert.norm, "norm_cap": cert.norm_cap})
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--eps", type=float, nargs="+", default=[0.0, 0.005, 0.01, 0.02])
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="write the records as JSON")
    args = ap.parse_args(argv)
    records = sweep(load_config(args.config), args.eps, args.seed)
    for r in records:
        if r["status"] == "ok":
            print(f"eps {r['epsilon']:<8g} eta {r['eta']:.4f}  c {r['c']:.4f}  "
                  f"p_N {r['p_N']:.4f}  |b| {r['norm_b']:.4f}")
        else:
            print(f"eps {r['epsilon']:<8g} infeasible")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(records, fh, indent=1)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
