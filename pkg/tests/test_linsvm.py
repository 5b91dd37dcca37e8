import numpy as np
import pytest
from scipy.optimize import minimize

from pedphone.linsvm import augment, fit_linear_svm


def primal(w, X, y, C):
    return 0.5 * w @ w + np.sum(C * np.maximum(0, 1 - y * (X @ w)))


def test_matches_generic_optimizer_on_primal():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(1, 1, (30, 3)), rng.normal(-1, 1, (30, 3))])
    y = np.r_[np.ones(30), -np.ones(30)]
    C = np.where(y > 0, 2.0, 0.5)
    fit = fit_linear_svm(X, y, C, tol=1e-10, max_epochs=100000)
    Xa = augment(X)
    w = np.r_[fit.weights, fit.bias]
    ref = minimize(primal, np.zeros(4), args=(Xa, y, C), method="Powell",
                   options={"xtol": 1e-10, "ftol": 1e-12, "maxiter": 200000})
    assert primal(w, Xa, y, C) <= ref.fun + 1e-6
    assert fit.gap < 1e-10


def test_duality_gap_reached_and_alphas_boxed():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 10))
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=200) > 0, 1.0, -1.0)
    C = np.full(200, 0.7)
    fit = fit_linear_svm(X, y, C)
    assert fit.gap < 1e-4
    assert np.all(fit.alpha >= 0) and np.all(fit.alpha <= C + 1e-12)
    np.testing.assert_allclose(np.r_[fit.weights, fit.bias], (fit.alpha * y) @ augment(X), atol=1e-9)


def test_warm_start_reaches_same_solution():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 5))
    y = np.sign(X[:, 1] + 0.1)
    cold = fit_linear_svm(X, y, 1.0, tol=1e-9, max_epochs=50000)
    warm = fit_linear_svm(X, y, 1.0, alpha0=cold.alpha, tol=1e-9, max_epochs=50000)
    assert warm.epochs <= 2
    np.testing.assert_allclose(warm.weights, cold.weights, atol=1e-6)


def test_rejects_bad_labels():
    with pytest.raises(ValueError):
        fit_linear_svm(np.zeros((2, 2)), np.array([0.0, 1.0]), 1.0)
