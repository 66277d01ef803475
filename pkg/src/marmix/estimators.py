"""scikit-learn compatible wrappers around the ECM fit and the logistic baseline.

Unlabeled rows are marked with ``-1`` in ``y``, as in
:mod:`sklearn.semi_supervised`.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import baseline, ecm
from .exceptions import DataError
from .links import missing_prob
from .mixture import UncertaintyProfile, responsibilities

UNLABELED = -1


def _split_labels(y):
    """Return ``(classes, component_index)`` with -1 kept for unlabeled rows."""
    y = np.asarray(y)
    labeled = y != UNLABELED
    classes = np.unique(y[labeled])
    if classes.shape[0] != 2:
        raise DataError(f"expected exactly two observed classes, found {classes.tolist()}")
    idx = np.full(y.shape[0], UNLABELED, dtype=int)
    idx[labeled] = np.searchsorted(classes, y[labeled])
    return classes, idx


class MarMixtureClassifier(ClassifierMixin, BaseEstimator):
    """Two-component Gaussian mixture classifier fitted with a MAR label model.

    Parameters
    ----------
    link : {"ao", "logit"}, default="ao"
        Link from squared margin confidence to missing-label probability.
    lam : float or None, default=None
        Fixed Aranda-Ordaz shape; ``None`` estimates it within ``lambda_bounds``.
    max_iter : int, default=500
    tol : float, default=1e-8
        Relative change in the full log-likelihood that stops the iteration.
    ridge : float, default=1e-6
        Covariance regularizer, scaled by ``trace / d``.
    lambda_bounds : tuple, default=(1e-3, 5.0)
    random_state : int, default=0
        Seed for the k-means start used when labels are scarce.

    Attributes
    ----------
    classes_ : ndarray of shape (2,)
    params_ : FullParams
    fit_report_ : FitReport
    """

    def __init__(self, link="ao", lam=None, max_iter=500, tol=1e-8, ridge=1e-6,
                 lambda_bounds=(1e-3, 5.0), random_state=0):
        self.link = link
        self.lam = lam
        self.max_iter = max_iter
        self.tol = tol
        self.ridge = ridge
        self.lambda_bounds = lambda_bounds
        self.random_state = random_state

    def _config(self):
        return ecm.EcmConfig(
            max_iters=self.max_iter, rel_tol=self.tol, ridge=self.ridge, link=self.link,
            lam=self.lam, lambda_bounds=tuple(self.lambda_bounds), seed=self.random_state,
        )

    def fit(self, X, y, init=None):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, idx = _split_labels(y)
        self.params_, self.fit_report_ = ecm.fit(X, idx, self._config(), init=init)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        return responsibilities(X, self.params_.theta)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def missing_proba(self, X):
        """Fitted probability that the label of each row would be missing."""
        tau = self.predict_proba(X)
        return missing_prob(UncertaintyProfile.from_responsibilities(tau).delta_sq, self.params_.missingness)

    def impute(self, X, y):
        """Return ``y`` with unlabeled entries replaced by Bayes allocations."""
        check_is_fitted(self, "params_")
        X, y = check_X_y(X, y, dtype=float)
        y = np.asarray(y)
        out = y.copy()
        miss = y == UNLABELED
        if np.any(miss):
            out[miss] = self.predict(X[miss])
        return out

    def score_samples(self, X, y):
        """Full log-likelihood of ``(X, y)`` under the fitted model."""
        check_is_fitted(self, "params_")
        X, y = check_X_y(X, y, dtype=float)
        y = np.asarray(y)
        labeled = y != UNLABELED
        unknown = labeled & ~np.isin(y, self.classes_)
        if np.any(unknown):
            raise DataError(f"label {y[unknown][0]!r} at row {int(np.argmax(unknown))} was not seen in fit")
        idx = np.full(y.shape[0], UNLABELED, dtype=int)
        idx[labeled] = np.searchsorted(self.classes_, y[labeled])
        return ecm.full_loglik(X, idx, self.params_)


class LogisticBaseline(ClassifierMixin, BaseEstimator):
    """IRLS logistic regression on the labeled rows only; ``-1`` rows are dropped."""

    def __init__(self, ridge=1e-8, max_iter=100, tol=1e-8):
        self.ridge = ridge
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        y = np.asarray(y)
        labeled = y != UNLABELED
        self.classes_, idx = _split_labels(y)
        self.model_ = baseline.fit_irls(X[labeled], (idx[labeled] == 1).astype(float),
                                        ridge=self.ridge, max_iter=self.max_iter, tol=self.tol)
        self.coef_ = self.model_.coefficients[1:]
        self.intercept_ = self.model_.coefficients[0]
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        p1 = baseline.predict_proba(self.model_, X)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[(proba[:, 1] >= 0.5).astype(int)]
