"""Link functions from squared margin confidence to missing-label probability.

The Aranda-Ordaz family ``q = 1 - (1 + lam * exp(eta)) ** (-1 / lam)`` is
implemented for ``lam >= 0``; ``lam == 1`` is the logistic link and
``lam == 0`` the complementary log-log limit. The linear predictor is always
``eta = a0 + a1 * delta_sq``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import ConfigError, DataError, NumericalError

PROB_CLAMP = 1e-12
LAMBDA_MAX = 10.0


@dataclass(frozen=True)
class AoParams:
    """Aranda-Ordaz missingness parameters (intercept, slope on delta**2, shape)."""

    alpha0: float
    alpha1: float
    lam: float = 1.0

    def __post_init__(self):
        for name in ("alpha0", "alpha1", "lam"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise ConfigError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, val)
        if not 0.0 <= self.lam <= LAMBDA_MAX:
            raise ConfigError(f"lam must lie in [0, {LAMBDA_MAX}], got {self.lam}")

    def as_ao(self) -> "AoParams":
        return self


@dataclass(frozen=True)
class LogitParams:
    """Logistic missingness parameters; equivalent to ``AoParams(xi0, xi1, 1)``."""

    xi0: float
    xi1: float

    def __post_init__(self):
        for name in ("xi0", "xi1"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise ConfigError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, val)

    def as_ao(self) -> AoParams:
        return AoParams(self.xi0, self.xi1, 1.0)


def _log1p_lam_exp(eta, lam):
    # log(1 + lam * exp(eta)) without overflow, lam > 0
    return np.logaddexp(0.0, eta + np.log(lam))


def _inverse_raw(eta, lam):
    eta = np.asarray(eta, dtype=float)
    if lam == 0.0:
        return -np.expm1(-np.exp(eta))
    return -np.expm1(-_log1p_lam_exp(eta, lam) / lam)


def ao_inverse_link(eta, lam):
    """Missing probability for linear predictor ``eta``, clamped to [1e-12, 1 - 1e-12]."""
    if lam < 0:
        raise ConfigError(f"lam must be >= 0, got {lam}")
    q = np.clip(_inverse_raw(eta, lam), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(q) if q.ndim == 0 else q


def ao_forward_link(q, lam):
    """Aranda-Ordaz link ``g(q; lam)``, the inverse of :func:`ao_inverse_link`."""
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise DataError("q must lie in the open interval (0, 1)")
    if lam < 0:
        raise ConfigError(f"lam must be >= 0, got {lam}")
    log_surv = np.log1p(-q)
    if lam == 0.0:
        eta = np.log(-log_surv)
    else:
        eta = np.log(np.expm1(-lam * log_surv) / lam)
    return float(eta) if eta.ndim == 0 else eta


def missing_prob_ao(delta_sq, params):
    p = params.as_ao()
    return ao_inverse_link(p.alpha0 + p.alpha1 * np.asarray(delta_sq, dtype=float), p.lam)


def missing_prob_logit(delta_sq, params):
    if isinstance(params, LogitParams):
        xi0, xi1 = params.xi0, params.xi1
    else:
        xi0, xi1 = params.alpha0, params.alpha1
    q = np.clip(expit(xi0 + xi1 * np.asarray(delta_sq, dtype=float)), PROB_CLAMP, 1 - PROB_CLAMP)
    return float(q) if q.ndim == 0 else q


def missing_prob(delta_sq, params):
    """Dispatch on the parameter type; logit parameters use the AO path with ``lam = 1``."""
    return missing_prob_ao(delta_sq, params)


def missingness_loglik(missing_flags, q):
    """Bernoulli log-likelihood of the missingness indicators."""
    m = np.asarray(missing_flags, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(np.sum(m * np.log(q) + (1.0 - m) * np.log1p(-q)))


def eta_derivatives(eta, m, lam):
    """Per-row log-likelihood and its first two derivatives in ``eta``.

    Rows whose probability sits on the clamp get zero derivatives, matching
    the flat clamped value.

    Returns
    -------
    ll, d1, d2 : ndarray
    """
    eta = np.asarray(eta, dtype=float)
    m = np.asarray(m, dtype=float)
    raw = _inverse_raw(eta, lam)
    q = np.clip(raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    free = (raw > PROB_CLAMP) & (raw < 1.0 - PROB_CLAMP)
    # p = -d log(1-q) / d eta = e^eta / (1 + lam e^eta)
    if lam == 0.0:
        p = np.exp(eta)
    else:
        p = np.exp(eta - _log1p_lam_exp(eta, lam))
    odds_surv = (1.0 - q) / q
    d1 = -(1.0 - m) * p + m * odds_surv * p
    dp = p * (1.0 - lam * p)
    d2 = -(1.0 - m) * dp + m * (odds_surv * dp - odds_surv * p * p / q)
    ll = m * np.log(q) + (1.0 - m) * np.log1p(-q)
    d1 = np.where(free, d1, 0.0)
    d2 = np.where(free, d2, 0.0)
    return ll, d1, d2


def missingness_alpha_loglik(missing_flags, delta_sq, params):
    """Missingness log-likelihood at ``params``; cheaper than the score when only values matter."""
    p = params.as_ao()
    q = ao_inverse_link(p.alpha0 + p.alpha1 * np.asarray(delta_sq, dtype=float), p.lam)
    return missingness_loglik(missing_flags, q)


def _design(delta_sq):
    ds = np.asarray(delta_sq, dtype=float)
    return np.column_stack([np.ones_like(ds), ds])


def missingness_alpha_score(missing_flags, delta_sq, params):
    """Log-likelihood, gradient (2,) and Hessian (2, 2) in ``(alpha0, alpha1)``."""
    p = params.as_ao()
    X = _design(delta_sq)
    eta = X @ np.array([p.alpha0, p.alpha1])
    ll, d1, d2 = eta_derivatives(eta, missing_flags, p.lam)
    return float(ll.sum()), X.T @ d1, (X * d2[:, None]).T @ X


def missingness_score_and_hessian(missing_flags, delta_sq, params):
    """Gradient (3,) and symmetric Hessian (3, 3) in ``(alpha0, alpha1, lam)``.

    The alpha block is analytic. Derivatives involving ``lam`` use central
    differences with step ``1e-6 * max(1, lam)``; at ``lam = 0`` a one-sided
    difference is used since the family is not defined for negative shape.
    """
    p = params.as_ao()
    m = np.asarray(missing_flags, dtype=float)
    with np.errstate(invalid="ignore"):
        ll, g_a, h_a = missingness_alpha_score(m, delta_sq, p)
    for name, arr in (("gradient", g_a), ("hessian", h_a)):
        if not np.all(np.isfinite(arr)):
            eta = _design(delta_sq) @ np.array([p.alpha0, p.alpha1])
            with np.errstate(invalid="ignore"):
                _, d1, d2 = eta_derivatives(eta, m, p.lam)
            bad = ~(np.isfinite(eta) & np.isfinite(d1) & np.isfinite(d2))
            row = int(np.flatnonzero(bad)[0]) if np.any(bad) else -1
            raise NumericalError(f"non-finite missingness {name} at row {row}")
    h = 1e-6 * max(1.0, p.lam)

    def at(lam):
        return missingness_alpha_score(m, delta_sq, AoParams(p.alpha0, p.alpha1, lam))

    if p.lam - h >= 0:
        lo, hi, width = p.lam - h, p.lam + h, 2 * h
        f_lo, g_lo, _ = at(lo)
    else:
        lo, hi, width = p.lam, p.lam + h, h
        f_lo, g_lo = ll, g_a
    f_hi, g_hi, _ = at(hi)
    g_lam = (f_hi - f_lo) / width
    cross = (g_hi - g_lo) / width
    if width == 2 * h:
        h_ll = (f_hi - 2 * ll + f_lo) / h**2
    else:
        f_hi2, _, _ = at(p.lam + 2 * h)
        h_ll = (f_hi2 - 2 * f_hi + ll) / h**2
    grad = np.array([g_a[0], g_a[1], g_lam])
    hess = np.empty((3, 3))
    hess[:2, :2] = 0.5 * (h_a + h_a.T)
    hess[:2, 2] = hess[2, :2] = cross
    hess[2, 2] = h_ll
    return grad, hess


def calibrate_intercept(delta_sq, slope, lam, target_rate, tol=1e-6):
    """Intercept giving mean missing probability ``target_rate`` by bisection on [-30, 30]."""
    if not 0.01 < target_rate < 0.99:
        raise ConfigError(f"target_rate must lie in (0.01, 0.99), got {target_rate}")
    ds = np.asarray(delta_sq, dtype=float)

    def mean_q(a0):
        return float(np.mean(ao_inverse_link(a0 + slope * ds, lam)))

    lo, hi = -30.0, 30.0
    q_lo, q_hi = mean_q(lo), mean_q(hi)
    if not q_lo <= target_rate <= q_hi:
        raise NumericalError(
            f"target rate {target_rate} unreachable; achievable mean q in [{q_lo:.3g}, {q_hi:.3g}]"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        q_mid = mean_q(mid)
        if abs(q_mid - target_rate) <= tol * 1e-3:
            return mid
        if q_mid < target_rate:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    mid = 0.5 * (lo + hi)
    if abs(mean_q(mid) - target_rate) > tol:
        raise NumericalError(f"bisection stalled at intercept {mid}")
    return mid
