import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import contraction_problem
from fourier_cbc.certify import (AuditSettings, Certificate, CertificationError, audit_refine, barrier_surface,
                                 chebyshev_half_width, check_certificate, monte_carlo, safety_probability,
                                 surface_csv, synthesize)
from fourier_cbc.geometry import Ball, Box, Domain
from fourier_cbc.kernels import KernelParams, fit_cme
from fourier_cbc.systems import barr3_spec, dubins_spec, make_rng


def _model(problem, settings, data, kin, kout):
    return fit_cme(data, kin, kout, settings.regularization)


def test_safety_probability_examples():
    assert abs(safety_probability(0.277, 0.072, 5) - 0.363) <= 1e-12
    assert abs(safety_probability(0.263, 0.047, 5) - (1.0 - 0.263 - 5 * 0.047)) <= 1e-12
    assert abs(safety_probability(0.263, 0.047, 5) - 0.502) <= 1e-12
    for T in (1, 5, 100):
        assert safety_probability(0.3, 0.0, T) == pytest.approx(0.7, abs=1e-15)
    assert safety_probability(0.9, 0.2, 5) == 0.0


def test_audit_refine_gives_tenfold_density():
    for n in (1, 2, 3, 4):
        assert audit_refine(n) ** n >= 10


def test_contraction_certificate(contraction):
    problem, settings, data, kin, kout, cert = contraction
    assert 0.0 < cert.probability < 1.0 and not cert.vacuous
    assert cert.probability == pytest.approx(safety_probability(cert.eta, cert.c, problem.horizon), abs=1e-12)
    assert cert.norm <= cert.norm_cap + 1e-9
    # the LP enforces the bound-tightened conditions at lattice points, so the
    # untightened barrier conditions hold on the lattice too
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-0.2, 0.2, (2000, 2))
    x0 = x0[np.linalg.norm(x0, axis=1) <= 0.2]
    assert np.all(cert.barrier(x0) <= cert.eta + 1e-6)
    xu = rng.uniform(0.6, 1.0, (2000, 2))
    assert np.all(cert.barrier(xu) >= 1.0 - 1e-6)
    report = check_certificate(cert, _model(problem, settings, data, kin, kout))
    assert report.ok, report.residuals


def test_check_is_independent_of_workers(contraction):
    problem, settings, data, kin, kout, cert = contraction
    model = _model(problem, settings, data, kin, kout)
    audit = AuditSettings(refine=2, chunk=500)
    one = check_certificate(cert, model, audit)
    many = check_certificate(cert, model, audit, workers=3)
    assert one.residuals == many.residuals


def test_corrupted_barrier_fails(contraction):
    problem, settings, data, kin, kout, cert = contraction
    bad = replace(cert, b=cert.b * 0.5)
    report = check_certificate(bad, _model(problem, settings, data, kin, kout))
    assert not report.ok and not report.passed["unsafe"]


def test_larger_epsilon_breaks_kushner_first(contraction):
    problem, settings, data, kin, kout, cert = contraction
    model = _model(problem, settings, data, kin, kout)
    base = check_certificate(cert, model).residuals["kushner"]
    bumped = replace(cert, epsilon=cert.epsilon + 0.05)
    report = check_certificate(bumped, model)
    assert report.residuals["kushner"] == pytest.approx(base + 0.05 * cert.norm_cap * cert.kappa)
    assert not report.passed["kushner"]
    assert all(report.passed[k] for k in ("init", "unsafe", "positivity"))


def test_kernel_mismatch_is_an_error(contraction):
    problem, settings, data, kin, kout, cert = contraction
    other = fit_cme(data, KernelParams(1.0, [0.5, 0.4]), kout, settings.regularization)
    with pytest.raises(CertificationError, match="kernel"):
        check_certificate(cert, other)


def test_overlapping_initial_and_unsafe_is_infeasible():
    problem, settings, data, kin, kout = contraction_problem(samples=150)
    clash = replace(problem, initial=Box([0.5, 0.5], [0.7, 0.7]))
    with pytest.raises(CertificationError) as err:
        synthesize(clash, settings, data, kin, kout)
    assert "infeasible" in str(err.value)
    assert err.value.family in ("init", "unsafe")


def test_synthesis_is_deterministic():
    args = contraction_problem(samples=120)
    a = synthesize(*args, seed=0)
    b = synthesize(*args, seed=0)
    assert np.array_equal(a.b, b.b) and a.probability == b.probability


def test_certificate_round_trip(tmp_path, contraction):
    cert = contraction[-1]
    path = tmp_path / "cert.json"
    cert.save(path)
    back = Certificate.load(path)
    assert np.array_equal(back.b, cert.b)
    assert (back.eta, back.c, back.probability, back.horizon) == (cert.eta, cert.c, cert.probability, cert.horizon)
    x = np.random.default_rng(2).uniform(-1, 1, (50, 2))
    assert np.allclose(back.barrier(x), cert.barrier(x), rtol=0, atol=1e-12)
    d = cert.to_dict()
    assert d["schema_version"] == 1
    assert d["infinite_horizon_bound"]["valid"] == (cert.c == 0.0)
    d["schema_version"] = 2
    with pytest.raises(CertificationError, match="schema"):
        Certificate.from_dict(d)


def test_chebyshev_half_width():
    assert chebyshev_half_width(0.5, 10_000, 0.9) == pytest.approx(math.sqrt(0.25 / 1000))
    assert chebyshev_half_width(1.0, 100, 0.9) == 0.0


def test_monte_carlo_noise_free_contraction():
    dom = Domain([-3.0, -2.0], [2.5, 1.0])
    spec = barr3_spec(dom, noise_std=0.0)
    res = monte_carlo(spec, [0.0, 0.0], 10, 50, 0.9, make_rng(0, "mc"), Box([1.0, 0.5], [2.5, 1.0]))
    assert res.estimate == 1.0 and res.lower == 1.0 and res.upper == 1.0
    with pytest.raises(ValueError):
        monte_carlo(spec, [0.0, 0.0], 10, 0, 0.9, make_rng(0, "mc"), None)
    with pytest.raises(ValueError):
        monte_carlo(spec, [0.0, 0.0], 10, 5, 1.0, make_rng(0, "mc"), None)


def test_monte_carlo_region_reports_worst_start():
    dom = Domain([-0.5, -1.5, -1.0], [4.5, 1.5, 1.0])
    spec = dubins_spec(dom, noise_std=(0.0, 0.0, 0.0))
    wall = Box([1.2, -1.5, -1.0], [4.5, 1.5, 1.0])
    init = Box([-0.5, -0.1, -0.05], [0.5, 0.1, 0.05])
    res = monte_carlo(spec, init, 2, 3, 0.9, make_rng(0, "mc"), wall, grid_points=27)
    # x moves 0.5 per step regardless of start; starts with x > 0.2 reach the wall
    assert res.estimate == 0.0 and res.worst_state[0] > 0.2 and res.starts >= 4


def test_barrier_surface(contraction):
    cert = contraction[-1]
    rows = barrier_surface(cert, 11)
    assert rows.shape == (121, 4)
    assert np.allclose(rows[:, 2], cert.barrier(rows[:, :2]))
    assert set(np.unique(rows[:, 3])) <= {-1.0, 0.0, 1.0}
    assert np.all((rows[:, 3] == 1) == (rows[:, 2] >= 1.0))
    text = surface_csv(rows)
    assert text.splitlines()[0] == "x1,x2,B,level" and len(text.splitlines()) == 122
    with pytest.raises(ValueError):
        barrier_surface(cert, 1)
    with pytest.raises(ValueError):
        barrier_surface(cert, 5, fixed={0: 0.0})


def test_ball_initial_region_is_supported(contraction):
    problem = contraction[0]
    assert isinstance(problem.initial, Ball)
