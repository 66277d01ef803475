import numpy as np
import pytest
from scipy.special import expit

from marmix.baseline import LogisticModel, fit_irls, predict_proba
from marmix.exceptions import DataError


def plain_newton(X, t, iters=50):
    Z = np.column_stack([np.ones(len(X)), X])
    b = np.zeros(Z.shape[1])
    for _ in range(iters):
        p = expit(Z @ b)
        b = b + np.linalg.solve(Z.T @ (Z * (p * (1 - p))[:, None]), Z.T @ (t - p))
    return b


def test_four_point_fixture_matches_newton():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    t = np.array([0.0, 1.0, 0.0, 1.0])
    model = fit_irls(X, t)
    np.testing.assert_allclose(model.coefficients, plain_newton(X, t), atol=1e-6)
    assert not model.separated


def test_symmetric_data_has_zero_intercept(rng):
    x = rng.normal(size=400)
    X = np.r_[x, -x][:, None]
    t = np.r_[(x > 0).astype(float), (x <= 0).astype(float)]
    t[::7] = 1 - t[::7]
    t[400:] = 1 - t[:400]
    model = fit_irls(X, t)
    Z = np.column_stack([np.ones(800), X])
    p = expit(Z @ model.coefficients)
    se = np.sqrt(np.linalg.inv(Z.T @ (Z * (p * (1 - p))[:, None]))[0, 0])
    assert abs(model.coefficients[0]) <= 3 * se


def test_score_is_zero_at_return(rng):
    X = rng.normal(size=(300, 3))
    t = (rng.uniform(size=300) < expit(X @ [1.0, -0.5, 0.2] + 0.3)).astype(float)
    model = fit_irls(X, t)
    Z = np.column_stack([np.ones(300), X])
    score = Z.T @ (t - expit(Z @ model.coefficients))
    assert np.linalg.norm(score) <= 1e-6
    assert np.linalg.norm(score) <= 1e-6 * 300


def test_deviance_never_increases(rng):
    X = rng.normal(size=(200, 2)) * 3
    t = (rng.uniform(size=200) < expit(X @ [2.0, -1.0])).astype(float)
    trace = np.array(fit_irls(X, t).deviance_trace)
    assert np.all(np.diff(trace) <= 1e-9)


def test_separation_flagged():
    X = np.array([[-0.2], [-0.1], [0.1], [0.2]])
    model = fit_irls(X, np.array([0.0, 0.0, 1.0, 1.0]))
    assert model.separated and np.max(np.abs(model.coefficients)) > 30


def test_single_class_rejected():
    with pytest.raises(DataError):
        fit_irls(np.zeros((4, 1)), np.ones(4))


def test_predict_proba_zero_coefficients():
    model = LogisticModel(np.zeros(3), fitted=True)
    np.testing.assert_array_equal(predict_proba(model, np.ones((4, 2))), 0.5)


def test_predict_on_hyperplane_and_formula(rng):
    model = LogisticModel(np.array([1.0, 2.0, -1.0]), fitted=True)
    assert predict_proba(model, [[0.0, 1.0]])[0] == pytest.approx(0.5)
    X = rng.normal(size=(10, 2))
    np.testing.assert_allclose(predict_proba(model, X), 1 / (1 + np.exp(-(1 + 2 * X[:, 0] - X[:, 1]))), rtol=1e-14)


def test_affine_rescaling_consistency(rng):
    X = rng.normal(size=(100, 2))
    t = (rng.uniform(size=100) < expit(X @ [1.0, -1.0])).astype(float)
    model = fit_irls(X, t)
    A, c = np.array([2.0, 0.5]), np.array([1.0, -3.0])
    b = model.coefficients
    moved = LogisticModel(np.r_[b[0] - np.sum(b[1:] * c / A), b[1:] / A], fitted=True)
    np.testing.assert_allclose(predict_proba(moved, X * A + c), predict_proba(model, X), rtol=1e-12)


def test_unfitted_model_rejected():
    with pytest.raises(DataError):
        predict_proba(LogisticModel(), np.zeros((1, 1)))
