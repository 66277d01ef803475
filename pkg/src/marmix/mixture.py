"""Gaussian mixture primitives: densities, posteriors, margin confidence.

All probability arithmetic is carried out in log-space. Covariances are
factored with a Cholesky decomposition and never silently repaired; a
non-SPD matrix raises :class:`~marmix.exceptions.NotSPDError`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .exceptions import DataError, NotSPDError, NumericalError

LOG_2PI = np.log(2.0 * np.pi)
LOG_2 = np.log(2.0)


@dataclass(frozen=True)
class MixtureParams:
    """Weights, means and covariances of a K-component Gaussian mixture.

    Parameters
    ----------
    weights : array_like of shape (K,)
    means : array_like of shape (K, d)
    covariances : array_like of shape (K, d, d)
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(-1, 1, 1)
        k = w.shape[0]
        if mu.shape[0] != k:
            # a (d,) vector per component with d == 1 arrives as shape (1, K)
            if mu.shape == (1, k):
                mu = mu.T
            else:
                raise DataError(f"means have {mu.shape[0]} rows for {k} weights")
        d = mu.shape[1]
        if cov.shape != (k, d, d):
            raise DataError(f"covariances have shape {cov.shape}, expected {(k, d, d)}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DataError(f"weights must be a probability vector, got {w}")
        for i in range(k):
            if np.max(np.abs(cov[i] - cov[i].T)) > 1e-12:
                raise DataError(f"covariance of component {i} is not symmetric")
        for arr in (w, mu, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        # factor once; raises NotSPDError for the offending component
        object.__setattr__(self, "_chol", tuple(_cholesky(cov[i], i) for i in range(k)))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @property
    def cholesky_factors(self) -> tuple:
        """Lower-triangular factors ``L_k`` with ``L_k @ L_k.T == covariances[k]``."""
        return self._chol

    def permuted(self, order) -> "MixtureParams":
        order = list(order)
        return MixtureParams(self.weights[order], self.means[order], self.covariances[order])


def _cholesky(cov, component):
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise NotSPDError(component) from exc
    if not np.all(np.isfinite(chol)) or np.any(np.diag(chol) <= 0):
        raise NotSPDError(component)
    return chol


def _log_pdf_chol(X, mean, chol):
    d = mean.shape[0]
    z = linalg.solve_triangular(chol, (X - mean).T, lower=True, check_finite=False)
    half_logdet = np.sum(np.log(np.diag(chol)))
    return -0.5 * d * LOG_2PI - half_logdet - 0.5 * np.sum(z * z, axis=0)


def gaussian_log_pdf(y, mean, cov):
    """Log-density of a multivariate normal.

    ``y`` may be a single point of shape (d,) or a batch of shape (n, d);
    the return value is a scalar or an (n,) array accordingly.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    y = np.asarray(y, dtype=float)
    single = y.ndim <= 1
    X = y.reshape(1, -1) if single else y
    if X.shape[1] != mean.shape[0] or cov.shape != (mean.shape[0], mean.shape[0]):
        raise DataError(
            f"dimension mismatch: y has {X.shape[1]} features, mean {mean.shape}, cov {cov.shape}"
        )
    out = _log_pdf_chol(X, mean, _cholesky(cov, 0))
    return float(out[0]) if single else out


def component_log_densities(X, params: MixtureParams):
    """Return the (n, K) matrix ``log pi_k + log N(x_j; mu_k, Sigma_k)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.n_features:
        raise DataError(f"X has {X.shape[1]} features, params expect {params.n_features}")
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    cols = [
        log_w[k] + _log_pdf_chol(X, params.means[k], params.cholesky_factors[k])
        for k in range(params.n_components)
    ]
    return np.column_stack(cols)


def _normalize_log(log_joint):
    finite_max = np.max(log_joint, axis=1, keepdims=True)
    bad = ~np.isfinite(finite_max[:, 0])
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"all component densities vanish or are non-finite at row {row}")
    tau = np.exp(log_joint - finite_max)
    tau /= tau.sum(axis=1, keepdims=True)
    return tau


def responsibilities(X, params: MixtureParams):
    """Posterior component probabilities ``tau`` of shape (n, K)."""
    return _normalize_log(component_log_densities(X, params))


def margin_confidence(tau):
    """Gap between the two largest posterior probabilities.

    Accepts a single probability row or an (n, K) matrix. For K = 2 this is
    ``|2 tau_1 - 1|``.
    """
    tau = np.asarray(tau, dtype=float)
    rows = np.atleast_2d(tau)
    if rows.shape[1] == 2:
        delta = np.abs(2.0 * rows[:, 0] - 1.0)
    else:
        top2 = np.sort(rows, axis=1)[:, -2:]
        delta = top2[:, 1] - top2[:, 0]
    return float(delta[0]) if tau.ndim == 1 else delta


def shannon_entropy(tau):
    """Natural-log entropy of a probability row (or each row of a matrix), 0 log 0 = 0."""
    tau = np.asarray(tau, dtype=float)
    rows = np.atleast_2d(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rows > 0, rows * np.log(rows), 0.0)
    h = -terms.sum(axis=1)
    return float(h[0]) if tau.ndim == 1 else h


def entropy_quadratic_approx(delta):
    """Second-order approximation ``log 2 - delta**2 / 2`` of the two-class entropy."""
    delta = np.asarray(delta, dtype=float)
    out = LOG_2 - 0.5 * delta**2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class UncertaintyProfile:
    delta: np.ndarray
    delta_sq: np.ndarray
    entropy: np.ndarray

    @classmethod
    def from_responsibilities(cls, tau) -> "UncertaintyProfile":
        delta = margin_confidence(np.atleast_2d(tau))
        return cls(delta=delta, delta_sq=delta * delta, entropy=shannon_entropy(np.atleast_2d(tau)))


def bayes_classify(X, params: MixtureParams):
    """Bayes allocation: index of the largest responsibility (ties go to the lowest index)."""
    # np.argmax returns the first maximal index
    return np.argmax(responsibilities(X, params), axis=1)


def _check_labels(y, n, k):
    y = np.asarray(y)
    if y.shape != (n,):
        raise DataError(f"labels have shape {y.shape}, expected ({n},)")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integer component indices or -1")
        y = y.astype(int)
    labeled = y >= 0
    bad = labeled & (y >= k)
    if np.any(bad) or np.any(y < -1):
        row = int(np.flatnonzero(bad | (y < -1))[0])
        raise DataError(f"row {row} has label {y[row]} outside 0..{k - 1}")
    return y, labeled


def loglik_ignorable(X, y, params: MixtureParams):
    """Observed-data log-likelihood that ignores the missingness mechanism.

    Labeled rows (``y >= 0``) contribute ``log pi_z + log N(x; mu_z, Sigma_z)``;
    unlabeled rows (``y == -1``) contribute the log mixture density.
    """
    log_joint = component_log_densities(X, params)
    y, labeled = _check_labels(y, log_joint.shape[0], params.n_components)
    lab = log_joint[np.flatnonzero(labeled), y[labeled]].sum()
    unl = logsumexp(log_joint[~labeled], axis=1).sum() if np.any(~labeled) else 0.0
    return float(lab + unl)
