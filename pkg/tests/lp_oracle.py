"""Random small LPs and an exhaustive vertex-enumeration oracle."""

import itertools

import numpy as np

from fourier_cbc.lp import LPModel

BOX = 10.0


def random_lp(seed: int) -> LPModel:
    """At most 3 variables and 8 rows, boxed so every feasible instance has an optimum."""
    r = np.random.default_rng(seed)
    nv = int(r.integers(1, 4))
    rows = int(r.integers(1, 9))
    A = np.round(r.normal(size=(rows, nv)), 3)
    center = r.uniform(-3, 3, nv)
    slack = r.uniform(-1.5, 3.0, rows)  # negative slack can make the instance infeasible
    senses = np.where(r.random(rows) < 0.5, "<=", ">=")
    ax = A @ center
    rhs = np.where(senses == "<=", ax + slack, ax - slack)
    c = np.round(r.normal(size=nv), 3)
    return LPModel([f"x{j}" for j in range(nv)], c, A, senses, rhs,
                   np.full(nv, -BOX), np.full(nv, BOX), [f"r{i}" for i in range(rows)])


def vertex_enumeration(model: LPModel, tol: float = 1e-9):
    """Return ("optimal", objective) or ("infeasible", None) by trying every vertex."""
    nv = model.n_vars
    G = np.where((model.senses == "<=")[:, None], -model.matrix, model.matrix)
    h = np.where(model.senses == "<=", -model.rhs, model.rhs)
    eye = np.eye(nv)
    G = np.vstack([G, eye, -eye])
    h = np.concatenate([h, model.lower, -model.upper])
    best = None
    for subset in itertools.combinations(range(G.shape[0]), nv):
        M = G[list(subset)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[list(subset)])
        if np.all(G @ x >= h - tol * (1 + np.abs(h))):
            val = float(model.objective @ x)
            best = val if best is None else min(best, val)
    return ("infeasible", None) if best is None else ("optimal", best)
