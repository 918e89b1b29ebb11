"""External LP backend built on SciPy's HiGHS interface.

Usage::

    python -m fourier_cbc.highs_backend model.lp solution.sol

Reads the LP text format of :mod:`fourier_cbc.lp` and writes the solution
format read by :func:`fourier_cbc.solver.read_solution`. Configure it as the
solver backend with ``backend = "python3 -m fourier_cbc.highs_backend"``.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .lp import LPModel, parse_lp
from .solver import write_solution

_STATUS = {0: "optimal", 1: "iteration-limit", 2: "infeasible", 3: "unbounded"}


def solve_highs(model: LPModel) -> tuple[str, np.ndarray]:
    """Solve ``model`` with HiGHS; returns (status, x)."""
    flip = np.where(model.senses == ">=", -1.0, 1.0)
    bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)
              for lo, hi in zip(model.lower, model.upper)]
    res = linprog(model.objective, A_ub=model.matrix * flip[:, None], b_ub=model.rhs * flip,
                  bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    status = _STATUS.get(res.status, "iteration-limit")
    x = res.x if res.x is not None else np.zeros(model.n_vars)
    return status, np.asarray(x, dtype=float)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: python -m fourier_cbc.highs_backend MODEL.lp SOLUTION.sol", file=sys.stderr)
        return 2
    model = parse_lp(Path(argv[0]).read_text(encoding="utf-8"))
    status, x = solve_highs(model)
    write_solution(argv[1], status, model.var_names, x)
    return 0


if __name__ == "__main__":
    sys.exit(main())
