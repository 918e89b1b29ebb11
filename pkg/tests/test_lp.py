import re

import numpy as np
import pytest

from fourier_cbc.bounds import TighteningCoefficients
from fourier_cbc.certify import SynthesisSettings, prepare
from fourier_cbc.geometry import Ball, Box, Domain, filter_lattice, product_lattice
from fourier_cbc.kernels import KernelParams
from fourier_cbc.lp import (ETA_MAX, LPError, LPModel, ProblemSpec, assemble, expected_row_count, export_lp,
                            parse_lp)
from fourier_cbc.solver import solve
from fourier_cbc.spectral import TransferMatrix, barrier_eval, build_basis, feature_map

from conftest import contraction_problem

ROW_NAME = re.compile(r"^(init|unsafe|kush|pos|comp0|compU|compX|compK)_\d+_[lu]$"
                      r"|^(init|unsafe|kush|pos)_(bound|bound_alt|exc_hi|exc_lo)$|^resid_\d+$")


def toy_model(seed=0, m=3, oversample=4, epsilon=0.0, residual_refine=2, margin=1.5):
    problem, _, data, kin, kout = contraction_problem(samples=150, seed=seed)
    problem = ProblemSpec(problem.domain, problem.initial, problem.unsafe, 5, epsilon, 5.0, 1.0)
    settings = SynthesisSettings(m_per_axis=m, oversample=oversample, residual_refine=residual_refine,
                                 margin=margin)
    prep = prepare(problem, settings, data, kin, kout)
    model = assemble(problem, prep.basis, prep.transfer, prep.lattice, prep.partitions, prep.tightening,
                     prep.residual_field)
    return problem, prep, model


def independent_row_count(prep):
    """Rows per family from partition sizes: brackets, bound rows, complements, excess rows."""
    n = prep.lattice.size
    total = 0 if prep.residual_field is None else len(prep.residual_field)
    for label in ("init", "unsafe", "domain", "domain"):
        k = len(prep.partitions[label][0])
        total += 2 * k
        a, ap, an = (prep.tightening.A(label), prep.tightening.A_pos(label), prep.tightening.A_neg(label))
        if a > 0 and n > k:
            two_pairs = min(ap, a) + min(an, a) > a
            total += 2 * (n - k) + 2 + (2 if two_pairs else 1)
        else:
            total += 1
    return total


@pytest.mark.parametrize("seed,m,oversample", [(0, 2, 2), (1, 3, 4), (2, 3, 3)])
def test_row_count_formula(seed, m, oversample):
    _, prep, model = toy_model(seed, m, oversample)
    assert model.n_rows == independent_row_count(prep)
    assert model.n_rows == expected_row_count(prep.partitions, prep.tightening, prep.lattice.size,
                                              len(prep.residual_field))
    assert all(ROW_NAME.match(name) for name in model.row_names)


def test_variable_layout():
    _, prep, model = toy_model()
    dim = prep.basis.dim
    assert model.var_names[:dim] == [f"b{j}" for j in range(dim)]
    with_outside = sum(prep.tightening.A(lab) > 0 for lab in ("init", "unsafe", "domain", "domain"))
    assert model.n_vars == dim + 2 + 8 + 4 * with_outside + 1
    j_eta = model.index("eta")
    assert model.lower[j_eta] == 0.0 and model.upper[j_eta] == ETA_MAX
    assert model.lower[model.index("c")] == 0.0
    assert model.objective[j_eta] == 1.0 and model.objective[model.index("c")] == 5.0


def test_variable_count_for_barr3_basis():
    dom = Domain([-3.0, -2.0], [2.5, 1.0])
    basis = build_basis(6, KernelParams(1.0, [1.0, 0.55]), dom, 2 * np.pi)
    lat = product_lattice(dom, basis.dilation, 2 * basis.f_max + 1)
    parts = {lab: filter_lattice(lat, r) for lab, r in
             (("init", Ball([1.5, 0.0], 0.9)), ("unsafe", Ball([-1.0, -1.0], 0.9)), ("domain", Box(dom.lower, dom.upper)))}
    tight = TighteningCoefficients(1.0, {"init": 0.0, "unsafe": 0.0, "domain": 0.0})
    spec = ProblemSpec(dom, Ball([1.5, 0.0], 0.5), Ball([-1.0, -1.0], 0.4), 5, 0.001, 7.0, 1.0)
    model = assemble(spec, basis, TransferMatrix(np.eye(71), 0.0), lat, parts, tight)
    assert model.n_vars == 71 + 2 + 8


def test_epsilon_only_moves_decrease_rhs():
    _, _, m0 = toy_model(epsilon=0.0)
    _, _, m0b = toy_model(epsilon=0.0)
    assert export_lp(m0) == export_lp(m0b)
    _, _, m1 = toy_model(epsilon=0.01)
    assert np.array_equal(m0.matrix, m1.matrix)
    moved = np.flatnonzero(m0.rhs != m1.rhs)
    assert moved.size and all(m0.row_names[i].startswith("kush_bound") for i in moved)
    assert np.allclose(m0.rhs[moved] - m1.rhs[moved], 0.01 * 5.0 * 1.0)


def test_constant_basis_cannot_separate():
    dom = Domain([0.0, 0.0], [1.0, 1.0])
    basis = build_basis(1, KernelParams(1.0, [0.5, 0.5]), dom, 2 * np.pi)
    lat = product_lattice(dom, basis.dilation, 4)
    parts = {"init": filter_lattice(lat, Box([0.0, 0.0], [0.4, 0.4])),
             "unsafe": filter_lattice(lat, Box([0.5, 0.5], [1.0, 1.0])),
             "domain": filter_lattice(lat, Box([0.0, 0.0], [1.0, 1.0]))}
    tight = TighteningCoefficients(1.0, {"init": 0.0, "unsafe": 0.0, "domain": 0.0})
    spec = ProblemSpec(dom, Box([0.0, 0.0], [0.4, 0.4]), Box([0.5, 0.5], [1.0, 1.0]), 3)
    model = assemble(spec, basis, TransferMatrix(np.eye(1), 0.0), lat, parts, tight)
    kush = [i for i, n in enumerate(model.row_names) if n.startswith("kush_") and n.endswith(("_u", "_l"))]
    assert np.allclose(model.matrix[kush, 0], 0.0)  # phi^T (H - I) b vanishes for H = [1]
    # the gap is eta_max - 1 = -1e-9, so the solver must resolve feasibility below that
    assert solve(model, tolerance=1e-10).status == "infeasible"


def test_assembly_errors():
    _, prep, _ = toy_model()
    spec = ProblemSpec(Domain([-1.0, -1.0], [1.0, 1.0]), Ball([0.0, 0.0], 0.2), Box([0.6, 0.6], [1.0, 1.0]), 5)
    empty = dict(prep.partitions)
    empty["init"] = (np.array([], dtype=int), np.arange(prep.lattice.size))
    with pytest.raises(LPError, match="init"):
        assemble(spec, prep.basis, prep.transfer, prep.lattice, empty, prep.tightening)
    with pytest.raises(LPError):
        ProblemSpec(spec.domain, spec.initial, spec.unsafe, 0)
    with pytest.raises(LPError):
        ProblemSpec(spec.domain, spec.initial, spec.unsafe, 3, epsilon=-1.0)


def test_text_roundtrip():
    tiny = LPModel(["x"], [1.0], np.zeros((0, 1)), [], [], [0.0], [np.inf], [])
    text = export_lp(tiny)
    assert text.splitlines() == ["minimize: 1.0 x", "subject to:", "bounds:", "0.0 <= x <= inf"]
    _, _, model = toy_model()
    text = export_lp(model)
    back = parse_lp(text)
    assert export_lp(back) == text
    assert back.n_rows == model.n_rows and back.row_names == model.row_names
    assert np.array_equal(back.matrix, model.matrix)
    with pytest.raises(LPError):
        parse_lp("maximize: x\n")
    with pytest.raises(LPError, match="undeclared"):
        parse_lp("minimize: 1.0 y\nsubject to:\nbounds:\n0.0 <= x <= 1.0\n")


def test_lp_solution_satisfies_semi_infinite_constraints(rng):
    problem, prep, model = toy_model(m=3, oversample=4, margin=2.0)
    sol = solve(model, iteration_cap=200_000)
    assert sol.status == "optimal"
    b = sol.x[:prep.basis.dim]
    eta, c = sol.value("eta"), sol.value("c")
    dom = problem.domain

    def sample(region, count):
        lo, hi = region.bbox()
        pts = rng.uniform(lo, hi, (count * 4, 2))
        return pts[region.contains(pts)][:count]

    x0 = sample(problem.initial, 100_000)
    xu = sample(problem.unsafe, 100_000)
    x = rng.uniform(dom.lower, dom.upper, (100_000, 2))
    assert np.max(barrier_eval(b, prep.basis, x0)) <= eta + 1e-6
    assert np.min(barrier_eval(b, prep.basis, xu)) >= 1.0 - 1e-6
    assert np.min(barrier_eval(b, prep.basis, x)) >= -1e-6
    decrease = feature_map(x, prep.basis) @ ((prep.transfer.H - np.eye(prep.basis.dim)) @ b)
    assert np.max(decrease) <= c - problem.robust_offset + 1e-6
