import math

import numpy as np
import pytest
from sklearn.base import clone

from cadx.svm import (
    SMOConvergenceError,
    SVMClassifier,
    SVMParams,
    decision_function_svm,
    dual_objective,
    fit_platt,
    platt_probability,
    predict_proba_svm,
    rbf_kernel,
    rbf_kernel_matrix,
    train_svm,
)
from oracles import dual_value, oracle_bias, qp_dual_oracle


def test_rbf_examples():
    x = np.array([0.3, -1.2, 4.0])
    assert rbf_kernel(x, x, 2.0) == 1.0
    assert rbf_kernel([0.0, 0.0], [1.0, 0.0], math.log(2)) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        rbf_kernel([0.0], [0.0, 1.0], 1.0)


def test_rbf_matches_formula():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, z = rng.normal(size=(2, 7))
        g = float(rng.uniform(0.01, 5))
        assert abs(rbf_kernel(x, z, g) - math.exp(-g * sum((a - b) ** 2 for a, b in zip(x, z)))) < 1e-12


def test_kernel_matrix_psd():
    rng = np.random.default_rng(1)
    for g in (0.01, 1.0, 100.0):
        K = rbf_kernel_matrix(*(2 * [rng.normal(size=(20, 5))]), g)
        assert np.array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_two_point_problem():
    X = np.array([[0.0], [1.0]])
    model = train_svm(X, np.array([0, 1]), SVMParams(C=1e3))
    assert model.alphas[0] == pytest.approx(model.alphas[1], abs=1e-12)
    d = decision_function_svm(model, np.array([[0.0], [0.5], [1.0]]))
    assert abs(d[1]) < 1e-6
    assert d[0] < 0 < d[2]
    p = predict_proba_svm(model, X)
    assert p[0] < 0.5 < p[1]


def test_matches_qp_oracle():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(6, 2))
    y = np.array([0, 1, 0, 1, 1, 0])
    model = train_svm(X, y, SVMParams(C=1.0, gamma_rbf=0.5))
    ys = np.where(y == 1, 1.0, -1.0)
    K = rbf_kernel_matrix(X, X, 0.5)
    ref = qp_dual_oracle(K, ys, 1.0)
    assert abs(dual_objective(model.alphas, ys, K) - dual_value(ref, ys, K)) < 1e-4
    probe = rng.normal(size=(50, 2))
    f_ref = rbf_kernel_matrix(probe, X, 0.5) @ (ref * ys) + oracle_bias(ref, ys, K, 1.0)
    assert np.array_equal(np.sign(decision_function_svm(model, probe)), np.sign(f_ref))


def test_duplicated_points_same_decision():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(-1.5, 0.5, size=(6, 2)), rng.normal(1.5, 0.5, size=(6, 2))])
    y = np.array([0] * 6 + [1] * 6)
    # with no bound active, duplicating splits each alpha in two and leaves f unchanged
    params = SVMParams(C=1e6, gamma_rbf=0.5, tol=1e-9)
    a = train_svm(X, y, params)
    b = train_svm(np.vstack([X, X]), np.concatenate([y, y]), params)
    grid = np.stack(np.meshgrid(np.linspace(-3, 3, 9), np.linspace(-3, 3, 9)), -1).reshape(-1, 2)
    assert np.max(np.abs(decision_function_svm(a, grid) - decision_function_svm(b, grid))) < 1e-6


def test_kkt_and_equality_constraint():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 4))
    y = (X[:, 0] + 0.5 * rng.normal(size=40) > 0).astype(int)
    tol = 1e-3
    model = train_svm(X, y, SVMParams(C=2.0, gamma_rbf=0.3, tol=tol))
    ys = model.labels
    assert abs(np.dot(model.alphas, ys)) < 1e-6
    m = ys * decision_function_svm(model, X)
    a, C = model.alphas, 2.0
    assert np.all(m[a == 0] >= 1 - 2 * tol - 1e-9)
    assert np.all(m[a == C] <= 1 + 2 * tol + 1e-9)
    free = (a > 0) & (a < C)
    assert np.all(np.abs(m[free] - 1) <= 2 * tol + 1e-9)


def test_single_class_rejected():
    with pytest.raises(ValueError, match="both classes"):
        train_svm(np.zeros((4, 2)), np.ones(4, int))
    with pytest.raises(ValueError):
        train_svm(np.zeros((2, 2)), np.array([0, 2]))


def test_width_mismatch():
    model = train_svm(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0, 1]))
    with pytest.raises(ValueError):
        predict_proba_svm(model, np.zeros((1, 3)))


def test_convergence_error_carries_diagnostics():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 3))
    y = (X[:, 0] > 0).astype(int)
    with pytest.raises(SMOConvergenceError) as info:
        train_svm(X, y, SVMParams(C=10.0, max_updates=1))
    assert info.value.n_updates >= 1
    assert info.value.max_violation > 0


def test_deterministic_given_seed():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(25, 3))
    y = (X[:, 1] > 0).astype(int)
    a = train_svm(X, y, random_state=7)
    b = train_svm(X, y, random_state=7)
    assert np.array_equal(a.alphas, b.alphas) and a.bias == b.bias


def test_platt_midpoint_and_monotone():
    assert platt_probability(0.0, -3.0, 0.0) == 0.5
    # strictly decreasing where representable, never increasing anywhere
    p = platt_probability(np.linspace(-15, 15, 301), 1.0, 0.0)
    assert np.all(np.diff(p) < 0)
    p = platt_probability(np.linspace(-800, 800, 1601), 1.0, 0.0)
    assert np.all(np.diff(p) <= 0) and np.all((p >= 0) & (p <= 1))


def test_platt_fit_direction():
    f = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
    A, B = fit_platt(f, np.array([-1, -1, -1, 1, 1, 1]))
    assert A < 0
    p = platt_probability(f, A, B)
    assert np.all(np.diff(p) > 0)


def test_params_validation():
    with pytest.raises(ValueError):
        SVMParams(C=0)
    with pytest.raises(ValueError):
        SVMParams(gamma_rbf=float("inf"))
    with pytest.raises(ValueError):
        SVMParams(max_passes=0)


def test_classifier_api():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(30, 3))
    y = (X[:, 0] > 0).astype(int)
    clf = SVMClassifier(C=10.0, gamma_rbf=0.5).fit(X, y)
    proba = clf.predict_proba(X)
    assert proba.shape == (30, 2) and np.allclose(proba.sum(1), 1)
    assert (clf.predict(X) == y).mean() > 0.9
    assert clone(clf).get_params()["C"] == 10.0
