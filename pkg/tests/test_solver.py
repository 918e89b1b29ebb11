import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fourier_cbc.lp import LPModel
from fourier_cbc.solver import BackendError, read_solution, solve, solve_via_backend, write_solution

from lp_oracle import random_lp, vertex_enumeration

HIGHS = f"{sys.executable} -m fourier_cbc.highs_backend"


def one_var(obj, rows, senses, rhs, lo=-np.inf, hi=np.inf):
    return LPModel(["x"], [obj], np.array(rows, dtype=float).reshape(-1, 1), senses, rhs, [lo], [hi],
                   [f"r{i}" for i in range(len(rows))])


def test_simple_examples():
    sol = solve(one_var(1.0, [1.0], [">="], [1.0], lo=0.0))
    assert sol.status == "optimal" and np.isclose(sol.x[0], 1.0) and np.isclose(sol.objective, 1.0)
    assert solve(one_var(-1.0, [1.0], [">="], [0.0])).status == "unbounded"
    assert solve(one_var(1.0, [1.0, 1.0], [">=", "<="], [2.0, 1.0])).status == "infeasible"


@given(st.integers(0, 10**6))
def test_matches_vertex_enumeration(seed):
    model = random_lp(seed)
    expected, value = vertex_enumeration(model)
    sol = solve(model)
    assert sol.status == expected
    if expected == "optimal":
        assert abs(sol.objective - value) <= 1e-6 * (1 + abs(value))
        assert sol.max_residual <= 1e-8


@given(st.integers(0, 10**6))
def test_weak_duality(seed):
    sol = solve(random_lp(seed))
    if sol.status == "optimal":
        assert sol.dual_objective <= sol.objective + 1e-6
        assert abs(sol.dual_objective - sol.objective) <= 1e-6 * (1 + abs(sol.objective))
        assert np.all(sol.duals >= -1e-9)


@pytest.mark.parametrize("route", ["primal", "dual"])
def test_routes_agree(route):
    for seed in range(40):
        model = random_lp(seed)
        a, b = solve(model, route=route), solve(model)
        assert a.status == b.status
        if a.status == "optimal":
            assert abs(a.objective - b.objective) <= 1e-7


def test_determinism():
    for seed in range(20):
        model = random_lp(seed)
        a, b = solve(model), solve(model)
        assert a.status == b.status and np.array_equal(a.x, b.x)


def test_redundant_row_keeps_objective():
    for seed in range(30):
        model = random_lp(seed)
        sol = solve(model)
        if sol.status != "optimal":
            continue
        # the sum of two rows of the same sense is implied by them
        idx = np.flatnonzero(model.senses == model.senses[0])[:2]
        extra = model.matrix[idx].sum(axis=0)
        grown = LPModel(model.var_names, model.objective, np.vstack([model.matrix, extra]),
                        np.append(model.senses, model.senses[0]), np.append(model.rhs, model.rhs[idx].sum()),
                        model.lower, model.upper, model.row_names + ["implied"])
        assert abs(solve(grown).objective - sol.objective) <= 1e-8


def test_duplicate_rows_are_merged():
    model = one_var(1.0, [1.0, 1.0, 1.0], [">=", ">=", ">="], [0.5, 2.0, 1.0])
    sol = solve(model)
    assert np.isclose(sol.x[0], 2.0)
    assert sol.duals.shape == (3,)


def test_objective_scaling_keeps_argmin():
    for seed in range(30):
        model = random_lp(seed)
        sol = solve(model)
        if sol.status != "optimal":
            continue
        scaled = LPModel(model.var_names, 3.7 * model.objective, model.matrix, model.senses, model.rhs,
                         model.lower, model.upper, model.row_names)
        s2 = solve(scaled)
        assert np.isclose(s2.objective, 3.7 * sol.objective, rtol=1e-9, atol=1e-9)
        assert abs(model.objective @ s2.x - sol.objective) <= 1e-7


def test_iteration_cap():
    model = random_lp(3)
    while solve(model).iterations < 2:
        model = random_lp(int(model.rhs.size) + 100)
    assert solve(model, iteration_cap=1).status == "iteration-limit"


def test_solution_file_format(tmp_path):
    path = tmp_path / "s.sol"
    write_solution(path, "optimal", ["a", "b"], [1.5, -2.0])
    status, values = read_solution(path.read_text())
    assert status == "optimal" and values == {"a": 1.5, "b": -2.0}
    with pytest.raises(BackendError):
        read_solution("a 1.0\n")
    with pytest.raises(BackendError):
        read_solution("status great\n")


def test_backend_missing():
    with pytest.raises(BackendError, match="no LP backend"):
        solve_via_backend(random_lp(0), None)
    with pytest.raises(BackendError, match="not found"):
        solve_via_backend(random_lp(0), "no-such-solver-binary")


def test_backend_violating_solution_rejected(tmp_path):
    script = tmp_path / "bad.py"
    script.write_text(
        "import sys\n"
        "open(sys.argv[2], 'w').write('status optimal\\nx 0.999\\n')\n")
    model = one_var(1.0, [1.0], [">="], [1.0])
    with pytest.raises(BackendError, match="violates"):
        solve_via_backend(model, f"{sys.executable} {script}")


def test_highs_backend_agrees():
    for seed in range(15):
        model = random_lp(seed)
        internal = solve(model)
        external = solve_via_backend(model, HIGHS)
        assert external.status == internal.status
        if internal.status == "optimal":
            assert abs(external.objective - internal.objective) <= 1e-6
