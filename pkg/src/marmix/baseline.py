"""Logistic regression by IRLS, used as the missingness-ignoring baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .exceptions import DataError, NumericalError

PROB_CLAMP = 1e-12
SEPARATION_LIMIT = 30.0


@dataclass
class LogisticModel:
    coefficients: np.ndarray | None = None  # intercept first
    fitted: bool = False
    n_train: int = 0
    n_iter: int = 0
    separated: bool = False
    deviance_trace: list = field(default_factory=list)


def _add_intercept(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([np.ones(X.shape[0]), X])


def _deviance(Z, t, beta):
    eta = Z @ beta
    # -2 * log-likelihood, overflow-safe
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - t * eta))


def fit_irls(X, t, ridge=1e-8, max_iter=100, tol=1e-8):
    """Fit ``P(t = 1 | x)`` by iteratively reweighted least squares.

    Each Newton step is halved until the deviance does not increase. The
    iteration stops when the score norm drops below ``tol`` or any
    coefficient exceeds 30 in magnitude, which is reported as separation.
    """
    Z = _add_intercept(X)
    t = np.asarray(t, dtype=float)
    n, p = Z.shape
    if t.shape != (n,):
        raise DataError(f"labels have shape {t.shape}, expected ({n},)")
    if not np.all((t == 0) | (t == 1)):
        raise DataError("labels must be binary 0/1")
    if t.min() == t.max():
        raise DataError("logistic regression needs both classes present")
    if n < p:
        raise DataError(f"need at least {p} labeled rows, got {n}")
    beta = np.zeros(p)
    dev = _deviance(Z, t, beta)
    model = LogisticModel(n_train=n, deviance_trace=[dev])
    for it in range(1, max_iter + 1):
        mu = expit(Z @ beta)
        score = Z.T @ (t - mu)
        if np.linalg.norm(score) <= tol:
            model.n_iter = it - 1
            break
        w = mu * (1.0 - mu)
        info = (Z * w[:, None]).T @ Z + ridge * np.eye(p)
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise NumericalError("singular IRLS normal equations") from exc
        for _ in range(50):
            cand = beta + step
            dev_c = _deviance(Z, t, cand)
            if dev_c <= dev:
                break
            step *= 0.5
        else:
            model.n_iter = it
            break
        beta, dev = cand, dev_c
        model.deviance_trace.append(dev)
        model.n_iter = it
        if np.max(np.abs(beta)) > SEPARATION_LIMIT:
            model.separated = True
            break
    if not np.all(np.isfinite(beta)):
        raise NumericalError("IRLS produced non-finite coefficients")
    model.coefficients = beta
    model.fitted = True
    return model


def predict_proba(model: LogisticModel, X):
    """Clamped probabilities ``P(t = 1 | x)``."""
    if not model.fitted:
        raise DataError("logistic model is not fitted")
    p = expit(_add_intercept(X) @ model.coefficients)
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
