"""ECM fitting of a two-component Gaussian mixture with a MAR label mechanism.

The full observed-data log-likelihood is

    sum_labeled log pi_z N(x; mu_z, Sigma_z) + sum_unlabeled log f(x)
    + sum_j [m_j log q_j + (1 - m_j) log(1 - q_j)]

with ``q_j`` the missing probability at squared margin confidence
``delta_j**2``. Each outer iteration runs two conditional maximizations:

* the mixture parameters by BFGS ascent on the full log-likelihood with the
  missingness parameters frozen (``delta`` still moves with the mixture);
* the missingness parameters by Newton's method at frozen ``delta**2``, with
  an optional golden-section profile search over the AO shape.

Neither step can lower the objective, so the trace is monotone.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit, logsumexp

from .exceptions import ConfigError, DataError, NotSPDError, NumericalError
from .links import (
    AoParams,
    LogitParams,
    LAMBDA_MAX,
    calibrate_intercept,
    eta_derivatives,
    missing_prob,
    missingness_alpha_loglik,
    missingness_alpha_score,
)
from .mixture import MixtureParams, UncertaintyProfile, bayes_classify, responsibilities

logger = logging.getLogger(__name__)

N_COMPONENTS = 2


@dataclass(frozen=True)
class FullParams:
    theta: MixtureParams
    missingness: AoParams | LogitParams

    @property
    def ao(self) -> AoParams:
        return self.missingness.as_ao()

    def with_missingness(self, alpha0, alpha1, lam=None) -> "FullParams":
        if isinstance(self.missingness, LogitParams):
            return replace(self, missingness=LogitParams(alpha0, alpha1))
        lam = self.missingness.lam if lam is None else lam
        return replace(self, missingness=AoParams(alpha0, alpha1, lam))


@dataclass(frozen=True)
class EcmConfig:
    """Settings for :func:`fit`.

    ``lam=None`` estimates the AO shape by profile search over
    ``lambda_bounds``; a number fixes it. ``link="logit"`` forces ``lam = 1``.
    """

    max_iters: int = 500
    rel_tol: float = 1e-8
    ridge: float = 1e-6
    link: str = "ao"
    lam: float | None = None
    lambda_bounds: tuple = (1e-3, 5.0)
    seed: int = 0
    inner_iters: int = 25
    max_backtracks: int = 40

    def __post_init__(self):
        if self.max_iters < 1 or self.inner_iters < 1:
            raise ConfigError("iteration limits must be positive")
        if not self.rel_tol > 0 or not self.ridge >= 0:
            raise ConfigError("rel_tol must be positive and ridge non-negative")
        if self.link not in ("ao", "logit"):
            raise ConfigError(f"unknown link {self.link!r}")
        lo, hi = self.lambda_bounds
        if not 0 < lo < hi <= LAMBDA_MAX:
            raise ConfigError(f"lambda_bounds must satisfy 0 < lo < hi <= {LAMBDA_MAX}")
        if self.lam is not None and not 0 <= self.lam <= LAMBDA_MAX:
            raise ConfigError(f"lam must lie in [0, {LAMBDA_MAX}]")

    @property
    def estimate_lambda(self) -> bool:
        return self.link == "ao" and self.lam is None

    @property
    def initial_lambda(self) -> float:
        if self.link == "logit" or self.lam is None:
            return 1.0
        return float(self.lam)


@dataclass
class FitReport:
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    final_params: FullParams
    final_responsibilities: np.ndarray
    theta_step_failures: int = 0
    ridge_events: int = 0
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# unconstrained parameterization of the mixture


def _tril(d):
    rows, cols = np.tril_indices(d)
    return rows, cols, rows == cols


def pack_theta(theta: MixtureParams) -> np.ndarray:
    """Map mixture parameters to the unconstrained vector used by the BFGS step."""
    if theta.n_components != N_COMPONENTS:
        raise ConfigError("the ECM estimator handles exactly two components")
    d = theta.n_features
    rows, cols, diag = _tril(d)
    w0 = theta.weights[0]
    parts = [[math.log(w0) - math.log1p(-w0)]]
    parts += [theta.means[k] for k in range(N_COMPONENTS)]
    for k in range(N_COMPONENTS):
        vals = theta.cholesky_factors[k][rows, cols].copy()
        vals[diag] = np.log(vals[diag])
        parts.append(vals)
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _unpack(v, d):
    rows, cols, diag = _tril(d)
    nt = rows.shape[0]
    u = v[0]
    means = v[1:1 + 2 * d].reshape(2, d)
    chols = []
    off = 1 + 2 * d
    for _ in range(N_COMPONENTS):
        vals = v[off:off + nt].copy()
        vals[diag] = np.exp(vals[diag])
        L = np.zeros((d, d))
        L[rows, cols] = vals
        chols.append(L)
        off += nt
    return u, means, chols


def unpack_theta(v, d) -> MixtureParams:
    u, means, chols = _unpack(np.asarray(v, dtype=float), d)
    w0 = float(expit(u))
    covs = []
    for L in chols:
        S = L @ L.T
        covs.append(0.5 * (S + S.T))
    return MixtureParams(np.array([w0, 1.0 - w0]), means, np.array(covs))


class ThetaObjective:
    """Full log-likelihood as a function of the packed mixture vector.

    Missingness parameters are held fixed. ``value_and_grad`` returns the
    log-likelihood and its exact gradient.
    """

    def __init__(self, X, y, missingness):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y)
        self.n, self.d = self.X.shape
        self.labeled = self.y >= 0
        self.lab_idx = np.flatnonzero(self.labeled)
        self.m = (~self.labeled).astype(float)
        self.ao = missingness.as_ao()
        onehot = np.zeros((self.n, N_COMPONENTS))
        onehot[self.lab_idx, self.y[self.labeled]] = 1.0
        self.onehot = onehot

    def _forward(self, v):
        u, means, chols = _unpack(v, self.d)
        log_w = np.array([log_expit(u), log_expit(-u)])
        lp = np.empty((self.n, N_COMPONENTS))
        zs = []
        for k in range(N_COMPONENTS):
            L = chols[k]
            diag = np.diag(L)
            if not np.all(np.isfinite(L)) or np.any(diag <= 0):
                raise NotSPDError(k)
            z = linalg.solve_triangular(L, (self.X - means[k]).T, lower=True, check_finite=False)
            lp[:, k] = (log_w[k] - 0.5 * self.d * np.log(2 * np.pi)
                        - np.sum(np.log(diag)) - 0.5 * np.sum(z * z, axis=0))
            zs.append(z)
        return u, means, chols, lp, zs

    def terms(self, v):
        """Return ``(ignorable, missingness, delta_sq, model_tau)`` at ``v``."""
        _, _, _, lp, _ = self._forward(v)
        return self._terms_from_lp(lp)[:4]

    def _terms_from_lp(self, lp):
        ign = lp[self.lab_idx, self.y[self.labeled]].sum()
        lse = logsumexp(lp, axis=1)
        ign += lse[~self.labeled].sum()
        tau = np.exp(lp - lse[:, None])
        s = lp[:, 0] - lp[:, 1]
        t = np.tanh(0.5 * s)
        delta_sq = t * t
        eta = self.ao.alpha0 + self.ao.alpha1 * delta_sq
        ll, d1, _ = eta_derivatives(eta, self.m, self.ao.lam)
        return float(ign), float(ll.sum()), delta_sq, tau, t, d1

    def value(self, v):
        ign, miss, *_ = self.terms(v)
        return ign + miss

    def value_and_grad(self, v):
        u, means, chols, lp, zs = self._forward(v)
        ign, miss, _, tau, t, d1 = self._terms_from_lp(lp)
        value = ign + miss
        if not np.isfinite(value):
            raise NumericalError("non-finite log-likelihood in mixture step")
        gamma = np.where(self.labeled[:, None], self.onehot, tau)
        c = d1 * self.ao.alpha1 * t * (1.0 - t * t)
        w = gamma + np.column_stack([c, -c])

        d = self.d
        rows, cols, diag = _tril(d)
        grad = np.empty_like(v)
        pi0 = expit(u)
        grad[0] = w[:, 0].sum() - pi0 * w.sum()
        off = 1 + 2 * d
        nt = rows.shape[0]
        for k in range(N_COMPONENTS):
            L = chols[k]
            # a_j = Sigma^{-1} (x_j - mu_k)
            a = linalg.solve_triangular(L, zs[k], lower=True, trans="T", check_finite=False)
            wk = w[:, k]
            grad[1 + k * d:1 + (k + 1) * d] = a @ wk
            L_inv = linalg.solve_triangular(L, np.eye(d), lower=True, check_finite=False)
            prec = L_inv.T @ L_inv
            G = 0.5 * ((a * wk) @ a.T - wk.sum() * prec)
            dL = 2.0 * G @ L
            vals = dL[rows, cols]
            vals[diag] *= L[rows[diag], cols[diag]]
            grad[off + k * nt:off + (k + 1) * nt] = vals
        return value, grad


def _bfgs_ascent(fun_grad, x0, max_iter, max_backtracks, gtol=1e-9):
    """Maximize with BFGS and Armijo backtracking.

    Returns ``(x, f, n_accepted, failed)``; ``failed`` means a line search
    exhausted its backtracks. Only improving steps are ever accepted.
    """
    f, g = fun_grad(x0)
    x = x0
    f, g = -f, -g
    H = np.eye(x.shape[0])
    scaled = False
    accepted = 0
    for _ in range(max_iter):
        if np.max(np.abs(g)) < gtol:
            return x, -f, accepted, False
        p = -H @ g
        slope = g @ p
        if not slope < 0:
            H = np.eye(x.shape[0])
            p = -g
            slope = g @ p
        step = min(1.0, 5.0 / max(np.max(np.abs(p)), 1e-300))
        for _ in range(max_backtracks):
            xn = x + step * p
            try:
                fn, gn = fun_grad(xn)
                fn, gn = -fn, -gn
            except (NumericalError, FloatingPointError, linalg.LinAlgError):
                fn = np.inf
            if np.isfinite(fn) and np.all(np.isfinite(gn)) and fn <= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            return x, -f, accepted, True
        s = xn - x
        yv = gn - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if not scaled:
                H = np.eye(x.shape[0]) * (sy / (yv @ yv))
                scaled = True
            rho = 1.0 / sy
            Hy = H @ yv
            H = H + ((sy + yv @ Hy) * rho * rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))
        improved = fn < f
        x, f, g = xn, fn, gn
        accepted += 1
        if not improved:
            break
    return x, -f, accepted, False


# ---------------------------------------------------------------------------
# public operations


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("X must be a non-empty 2-D array")
    if not np.all(np.isfinite(X)):
        raise DataError("X contains non-finite values")
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise DataError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    y = y.astype(int)
    if np.any((y < -1) | (y >= N_COMPONENTS)):
        raise DataError("labels must be 0, 1 or -1 (missing)")
    return X, y


def full_loglik(X, y, params: FullParams) -> float:
    """Full log-likelihood: ignorable mixture part plus the missingness term."""
    X, y = _check_xy(X, y)
    return ThetaObjective(X, y, params.missingness).value(pack_theta(params.theta))


def _moments(X, weights, ridge):
    wsum = weights.sum()
    mean = weights @ X / wsum
    r = X - mean
    cov = (r * weights[:, None]).T @ r / wsum
    d = X.shape[1]
    cov = 0.5 * (cov + cov.T) + ridge * np.trace(cov) / d * np.eye(d)
    return mean, cov


def initialize(X, y, config: EcmConfig = EcmConfig()) -> FullParams:
    """Starting values from labeled class moments, or k-means when labels are scarce."""
    from sklearn.cluster import KMeans

    X, y = _check_xy(X, y)
    n, d = X.shape
    if np.unique(X, axis=0).shape[0] < 2:
        raise DataError("need at least two distinct rows to initialize")
    counts = np.array([(y == k).sum() for k in range(N_COMPONENTS)])
    if np.all(counts >= d + 1):
        weights = counts / counts.sum()
        groups = [(y == k).astype(float) for k in range(N_COMPONENTS)]
    else:
        if np.all(counts == 0) and n < 2 * N_COMPONENTS:
            raise DataError("need labeled rows of each class or at least 4 rows")
        km = KMeans(n_clusters=N_COMPONENTS, n_init=10, random_state=config.seed).fit(X)
        lab = km.labels_
        if counts.sum() > 0:
            agree = sum(((lab == k) & (y == k)).sum() for k in range(N_COMPONENTS))
            swap = sum(((lab == 1 - k) & (y == k)).sum() for k in range(N_COMPONENTS))
            flip = swap > agree
        else:
            c = km.cluster_centers_
            flip = tuple(c[0]) > tuple(c[1])
        if flip:
            lab = 1 - lab
        groups = [(lab == k).astype(float) for k in range(N_COMPONENTS)]
        weights = np.array([g.sum() for g in groups]) / n
    stats = [_moments(X, g, config.ridge) for g in groups]
    theta = MixtureParams(weights, np.array([s[0] for s in stats]), np.array([s[1] for s in stats]))

    lam0 = config.initial_lambda
    rate = float(np.mean(y == -1))
    # keep the starting intercept finite when nothing (or everything) is missing
    rate = min(max(rate, 0.011), 0.989)
    delta_sq = UncertaintyProfile.from_responsibilities(responsibilities(X, theta)).delta_sq
    a0 = calibrate_intercept(delta_sq, 0.0, lam0, rate)
    miss = LogitParams(a0, 0.0) if config.link == "logit" else AoParams(a0, 0.0, lam0)
    return FullParams(theta, miss)


def e_step(X, y, params: FullParams):
    """Responsibilities, uncertainty profile and missing probabilities.

    Returned weights are one-hot on labeled rows; ``delta`` always comes from
    the model posterior so it reflects feature-based uncertainty only.
    """
    X, y = _check_xy(X, y)
    tau = responsibilities(X, params.theta)
    profile = UncertaintyProfile.from_responsibilities(tau)
    q = missing_prob(profile.delta_sq, params.missingness)
    weights = tau.copy()
    lab = y >= 0
    weights[lab] = 0.0
    weights[np.flatnonzero(lab), y[lab]] = 1.0
    return weights, profile, q


def cm_step_theta(X, y, current: FullParams, config: EcmConfig = EcmConfig()):
    """Conditional maximization over the mixture parameters.

    Returns ``(theta, info)`` where ``info`` records whether the line search
    failed and whether a covariance ridge was needed.
    """
    X, y = _check_xy(X, y)
    obj = ThetaObjective(X, y, current.missingness)
    v0 = pack_theta(current.theta)
    scale = 1.0 / X.shape[0]

    def fg(v):
        f, g = obj.value_and_grad(v)
        return f * scale, g * scale

    f0 = obj.value(v0)
    v, _, accepted, failed = _bfgs_ascent(fg, v0, config.inner_iters, config.max_backtracks)
    info = {"line_search_failed": failed and accepted == 0, "ridged": False, "accepted": accepted}
    if info["line_search_failed"]:
        logger.warning("mixture step line search failed; keeping current parameters")
    if accepted == 0:
        return current.theta, info
    try:
        theta = unpack_theta(v, X.shape[1])
    except NotSPDError:
        u, means, chols = _unpack(v, X.shape[1])
        covs = [L @ L.T for L in chols]
        covs = [0.5 * (S + S.T) + config.ridge * np.trace(S) / S.shape[0] * np.eye(S.shape[0]) for S in covs]
        w0 = float(expit(u))
        try:
            theta = MixtureParams(np.array([w0, 1 - w0]), means, np.array(covs))
        except NotSPDError:
            return current.theta, info
        info["ridged"] = True
    f_new = obj.value(pack_theta(theta))
    if not f_new >= f0 - 1e-10 * (1 + abs(f0)):
        return current.theta, info
    return theta, info


def _solve_alpha(m, delta_sq, a, lam, max_iter=100, tol=1e-10):
    """Newton ascent on (alpha0, alpha1) with step halving at fixed shape."""
    a = np.asarray(a, dtype=float)
    ll, g, H = missingness_alpha_score(m, delta_sq, AoParams(a[0], a[1], lam))
    for _ in range(max_iter):
        try:
            c = linalg.cho_factor(-H)
            direction = linalg.cho_solve(c, g)
        except linalg.LinAlgError:
            gn = np.linalg.norm(g)
            if gn == 0:
                break
            direction = g / max(gn, 1.0)
        if not np.all(np.isfinite(direction)):
            break
        step = 1.0
        improved = False
        for _ in range(60):
            cand = a + step * direction
            try:
                ll_c = missingness_alpha_loglik(m, delta_sq, AoParams(cand[0], cand[1], lam))
            except ConfigError:
                ll_c = -np.inf
            if np.isfinite(ll_c) and ll_c > ll:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        gain = ll_c - ll
        a = cand
        ll, g, H = missingness_alpha_score(m, delta_sq, AoParams(a[0], a[1], lam))
        if gain < tol:
            break
    return a, ll


def _golden_max(f, lo, hi, tol=1e-3, max_iter=80):
    """Golden-section search for the maximum of a unimodal ``f`` on [lo, hi].

    Returns every probed ``(x, value, payload)``; the caller picks the best.
    """
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc, fd = f(c), f(d)
    probes = [(c, *fc), (d, *fd)]
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc[0] >= fd[0]:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = f(c)
            probes.append((c, *fc))
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = f(d)
            probes.append((d, *fd))
    return probes


def cm_step_missingness(missing_flags, delta_sq, current, config: EcmConfig = EcmConfig()):
    """Conditional maximization over the missingness parameters at frozen ``delta**2``."""
    m = np.asarray(missing_flags, dtype=float)
    ao = current.as_ao()
    a_start = np.array([ao.alpha0, ao.alpha1])
    a_cur, ll_cur = _solve_alpha(m, delta_sq, a_start, ao.lam)
    best = (ll_cur, a_cur, ao.lam)
    if config.estimate_lambda and not isinstance(current, LogitParams):
        lo, hi = config.lambda_bounds

        def profile(log_lam):
            a, ll = _solve_alpha(m, delta_sq, best[1], math.exp(log_lam))
            return ll, a

        for log_lam, ll, a in _golden_max(profile, math.log(lo), math.log(hi)):
            if ll > best[0]:
                best = (ll, a, math.exp(log_lam))
    _, a, lam = best
    if isinstance(current, LogitParams):
        return LogitParams(a[0], a[1])
    return AoParams(a[0], a[1], lam)


def fit(X, y, config: EcmConfig = EcmConfig(), init: FullParams | None = None):
    """Run ECM to convergence; returns ``(params, report)``."""
    X, y = _check_xy(X, y)
    params = initialize(X, y, config) if init is None else init
    if config.link == "logit" and not isinstance(params.missingness, LogitParams):
        ao = params.ao
        params = replace(params, missingness=LogitParams(ao.alpha0, ao.alpha1))
    elif config.link == "ao" and isinstance(params.missingness, LogitParams):
        params = replace(params, missingness=params.ao)
    if config.link == "ao" and config.lam is not None and params.ao.lam != config.lam:
        ao = params.ao
        params = replace(params, missingness=AoParams(ao.alpha0, ao.alpha1, config.lam))
    m = (y == -1).astype(float)

    ll = full_loglik(X, y, params)
    if not np.isfinite(ll):
        raise NumericalError("non-finite log-likelihood at initialization")
    trace = [ll]
    converged = False
    failures = ridges = 0
    it = 0
    for it in range(1, config.max_iters + 1):
        theta, info = cm_step_theta(X, y, params, config)
        failures += info["line_search_failed"]
        ridges += info["ridged"]
        obj = ThetaObjective(X, y, params.missingness)
        delta_sq = obj.terms(pack_theta(theta))[2]
        miss = cm_step_missingness(m, delta_sq, params.missingness, config)
        params = FullParams(theta, miss)
        new = full_loglik(X, y, params)
        if not np.isfinite(new):
            raise NumericalError(f"non-finite log-likelihood at iteration {it}")
        trace.append(new)
        if abs(new - ll) <= config.rel_tol * max(1.0, abs(ll)):
            converged = True
            break
        ll = new
    report = FitReport(
        loglik_trace=np.array(trace),
        iterations=it,
        converged=converged,
        final_params=params,
        final_responsibilities=responsibilities(X, params.theta),
        theta_step_failures=failures,
        ridge_events=ridges,
    )
    return params, report


def impute_labels(X, y, fitted: FullParams):
    """Fill missing labels (``-1``) with the Bayes allocation; observed labels pass through."""
    X, y = _check_xy(X, y)
    out = y.copy()
    miss = y == -1
    if np.any(miss):
        out[miss] = bayes_classify(X[miss], fitted.theta)
    return out
