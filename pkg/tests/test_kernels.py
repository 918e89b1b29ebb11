import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fourier_cbc.geometry import Domain
from fourier_cbc.kernels import (FactorizationError, KernelError, KernelParams, SampleSet, cme_expectation,
                                 cme_weights, fit_cme, gram, median_heuristic, sqexp)


def test_sqexp_examples():
    k = KernelParams(1.0, [1.0])
    assert sqexp([0.3], [0.3], k) == 1.0
    assert math.isclose(sqexp([0.0], [1.0], k), 0.6065306597126334, rel_tol=1e-15)
    k2 = KernelParams(2.5, [0.5, 2.0])
    x, y = np.array([0.1, -0.4]), np.array([1.0, 0.7])
    assert sqexp(x, y, k2) == sqexp(y, x, k2)
    assert sqexp(x, y, k2) <= 2.5
    with pytest.raises(KernelError):
        sqexp([0.0], [0.0, 1.0], k2)


def test_kernel_params_validation():
    with pytest.raises(KernelError):
        KernelParams(-1.0, [1.0])
    with pytest.raises(KernelError):
        KernelParams(1.0, [0.0])


def test_gram_examples(rng):
    k = KernelParams(3.0, [0.7, 1.1])
    assert np.allclose(gram([[0.2, 0.3]], k), [[3.0]])
    dup = gram([[0.0, 0.0], [0.0, 0.0]], k)
    assert np.linalg.matrix_rank(dup) == 1
    pts = rng.normal(size=(3, 2))
    K = gram(pts, k)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-10
    ref = np.array([[sqexp(a, b, k) for b in pts] for a in pts])
    assert np.allclose(K, ref, rtol=1e-13)


def test_cme_weights_examples():
    k = KernelParams(1.0, [1.0])
    one = fit_cme(SampleSet([[0.4]], [[0.9]]), k, k, 0.0)
    assert np.allclose(cme_weights([0.4], one), [1.0])
    far = fit_cme(SampleSet([[0.0], [100.0]], [[1.0], [2.0]]), k, k, 0.0)
    assert np.allclose(cme_weights([0.0], far), [1.0, 0.0], atol=1e-12)
    heavy = fit_cme(SampleSet([[0.0], [1.0]], [[1.0], [2.0]]), k, k, 1e12)
    assert np.linalg.norm(cme_weights([0.3], heavy)) < 1e-11


def test_cme_weights_match_direct_solve(rng):
    X = rng.uniform(-1, 1, (40, 2))
    kin = KernelParams(1.3, [0.5, 0.8])
    model = fit_cme(SampleSet(X, X + 0.1), kin, kin, 1e-3)
    q = rng.uniform(-1, 1, (5, 2))
    K = gram(X, kin) + 40 * 1e-3 * np.eye(40)
    kq = np.array([[sqexp(a, b, kin) for b in X] for a in q])
    assert np.allclose(cme_weights(q, model), np.linalg.solve(K, kq.T).T, atol=1e-10)
    assert model.method == "cholesky"
    L = np.tril(model.factor[0])
    assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) <= 1e-8


def test_singular_system_reported():
    k = KernelParams(1.0, [1.0])
    with pytest.raises(FactorizationError):
        fit_cme(SampleSet([[0.0], [0.0]], [[1.0], [2.0]]), k, k, 0.0)


def test_cme_expectation_examples():
    f = np.array([3.0, -1.0, 7.0])
    assert cme_expectation(f, np.array([0.0, 1.0, 0.0])) == -1.0
    w = np.array([0.2, 0.5, 0.1])
    assert math.isclose(cme_expectation(np.ones(3), w), 0.8)
    with pytest.raises(KernelError):
        cme_expectation(f, np.ones(2))
    k = KernelParams(1.0, [1.0])
    model = fit_cme(SampleSet([[0.4]], [[0.9]]), k, k, 0.0)
    assert math.isclose(cme_expectation([np.sin(0.9)], cme_weights([0.4], model)), np.sin(0.9))


def test_median_heuristic_examples():
    assert np.allclose(median_heuristic([[0.0, 1.0], [2.0, 1.5]]), [2.0, 0.5])
    assert np.allclose(median_heuristic([[-1.0], [0.0], [1.0]]), [1.0])
    # axis 1 has mostly duplicates, so its median is zero and the mean is used
    pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 3.0]]
    assert np.isclose(median_heuristic(pts)[1], 9.0 / 6.0)
    with pytest.raises(KernelError):
        median_heuristic([[1.0, 1.0], [1.0, 1.0]])


def test_sampleset_csv_roundtrip(tmp_path):
    s = SampleSet([[0.1, 0.2], [1.0 / 3.0, -2.0]], [[0.3, 0.4], [5.0, 6.0]])
    text = s.to_csv()
    assert text.splitlines()[0] == "x1,x2,xp1,xp2"
    path = tmp_path / "d.csv"
    s.save(path)
    back = SampleSet.load(path)
    assert np.array_equal(back.states, s.states) and np.array_equal(back.successors, s.successors)
    with pytest.warns(UserWarning):
        SampleSet([[0.5]], [[2.0]]).validate(Domain([0.0], [1.0]))
    with pytest.raises(KernelError):
        SampleSet([[0.5]], [[2.0], [1.0]])


def test_interpolation_at_zero_regularization(rng):
    X = rng.uniform(-1, 1, (30, 2)) * 3
    k = KernelParams(1.0, [0.3, 0.3])
    model = fit_cme(SampleSet(X, X), k, k, 0.0)
    assert np.max(np.abs(cme_weights(X, model) - np.eye(30))) <= 1e-6


def test_gram_psd_floor(rng):
    X = rng.uniform(-1, 1, (200, 2))
    k = KernelParams(1.0, [0.5, 0.5])
    lam = 1e-5
    model = fit_cme(SampleSet(X, X), k, k, lam)
    assert np.linalg.eigvalsh(model.system_matrix()).min() >= 200 * lam - 1e-8


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_cme_expectation_linear(alpha, beta):
    r = np.random.default_rng(7)
    f, g, w = r.normal(size=12), r.normal(size=12), r.normal(size=12)
    lhs = cme_expectation(alpha * f + beta * g, w)
    rhs = alpha * cme_expectation(f, w) + beta * cme_expectation(g, w)
    assert math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-12)


@given(st.integers(0, 10_000))
def test_weight_norm_shrinks_with_regularization(seed):
    r = np.random.default_rng(seed)
    X = r.uniform(-1, 1, (15, 1))
    k = KernelParams(1.0, [0.4])
    q = r.uniform(-1, 1, 1)
    norms = [np.linalg.norm(cme_weights(q, fit_cme(SampleSet(X, X), k, k, lam)))
             for lam in (1e-6, 1e-4, 1e-2, 1e0, 1e2)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(norms, norms[1:]))
