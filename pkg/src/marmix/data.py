"""Synthetic mixtures, MAR label deletion and the MAGIC telescope loader."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .exceptions import ConfigError, DataError
from .links import AoParams, LogitParams, calibrate_intercept, missing_prob
from .mixture import MixtureParams, margin_confidence, responsibilities

MAGIC_COLUMNS = (
    "fLength", "fWidth", "fSize", "fConc", "fConc1",
    "fAsym", "fM3Long", "fM3Trans", "fAlpha", "fDist",
)
MAGIC_SELECTED = ("fAlpha", "fLength", "fM3Long", "fSize")
MAGIC_ROWS = 19020
MAGIC_CLASSES = {"g": 0, "h": 1}


@dataclass(frozen=True)
class Dataset:
    """Features with true and observed labels; ``observed_labels == -1`` marks a missing label."""

    features: np.ndarray
    observed_labels: np.ndarray
    true_labels: np.ndarray | None = None
    feature_names: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        obs = np.asarray(self.observed_labels).astype(int)
        n = X.shape[0]
        if obs.shape != (n,):
            raise DataError(f"observed_labels has shape {obs.shape}, expected ({n},)")
        if self.true_labels is not None:
            true = np.asarray(self.true_labels).astype(int)
            if true.shape != (n,):
                raise DataError(f"true_labels has shape {true.shape}, expected ({n},)")
            seen = obs >= 0
            if np.any(obs[seen] != true[seen]):
                raise DataError("observed labels disagree with true labels")
            true.setflags(write=False)
            object.__setattr__(self, "true_labels", true)
        names = tuple(self.feature_names) or tuple(f"x{i + 1}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} feature names for {X.shape[1]} columns")
        X.setflags(write=False)
        obs.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "observed_labels", obs)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def missing_flags(self) -> np.ndarray:
        return (self.observed_labels == -1).astype(int)

    @property
    def missing_rate(self) -> float:
        return float(self.missing_flags.mean())


# ---------------------------------------------------------------------------
# simulation

FAMILY_DEFAULTS = {
    "gaussian": {
        "means": [[0.0, 0.0], [1.5, 1.5]],
        "cov": [[1.0, 0.3], [0.3, 1.0]],
    },
    "gamma": {"shapes": [[2.0, 2.0], [5.0, 5.0]], "scale": 1.0, "shift": [[0.0, 0.0], [0.0, 0.0]]},
    "beta": {"a": [[2.0, 2.0], [5.0, 5.0]], "b": [[5.0, 5.0], [2.0, 2.0]]},
    "laplace": {"means": [[0.0, 0.0], [1.5, 1.5]], "scale": 1.0 / math.sqrt(2.0)},
}


@dataclass(frozen=True)
class SimSpec:
    """Two-component simulation design; ``mixing`` is the probability of component 0."""

    family: str = "gaussian"
    n: int = 2000
    mixing: float = 0.5
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILY_DEFAULTS:
            raise ConfigError(f"unknown family {self.family!r}; choose from {sorted(FAMILY_DEFAULTS)}")
        if not 0 < self.mixing < 1:
            raise ConfigError("mixing must lie in (0, 1)")
        if self.n < 1:
            raise ConfigError("n must be positive")
        unknown = set(self.params) - set(FAMILY_DEFAULTS[self.family])
        if unknown:
            raise ConfigError(f"unknown {self.family} parameters: {sorted(unknown)}")
        p = self.resolved()
        if self.family == "gamma" and (np.any(np.asarray(p["shapes"]) <= 0) or p["scale"] <= 0):
            raise ConfigError("gamma shapes and scale must be positive")
        if self.family == "beta" and (np.any(np.asarray(p["a"]) <= 0) or np.any(np.asarray(p["b"]) <= 0)):
            raise ConfigError("beta shape parameters must be positive")
        if self.family == "laplace" and p["scale"] <= 0:
            raise ConfigError("laplace scale must be positive")
        if self.family == "gaussian":
            try:
                np.linalg.cholesky(np.asarray(p["cov"], dtype=float))
            except np.linalg.LinAlgError as exc:
                raise ConfigError("gaussian covariance must be positive definite") from exc

    def resolved(self) -> dict:
        out = dict(FAMILY_DEFAULTS[self.family])
        out.update(self.params)
        return out

    def true_theta(self) -> MixtureParams:
        """Generating mixture parameters (Gaussian family only)."""
        if self.family != "gaussian":
            raise ConfigError(f"{self.family} mixtures have no Gaussian parameters")
        p = self.resolved()
        cov = np.asarray(p["cov"], dtype=float)
        return MixtureParams([self.mixing, 1 - self.mixing], np.asarray(p["means"], dtype=float), [cov, cov])


def _component_logpdf(spec: SimSpec, X, k):
    p = spec.resolved()
    if spec.family == "gaussian":
        return stats.multivariate_normal(np.asarray(p["means"])[k], np.asarray(p["cov"])).logpdf(X)
    if spec.family == "gamma":
        a = np.asarray(p["shapes"], dtype=float)[k]
        loc = np.asarray(p["shift"], dtype=float)[k]
        return stats.gamma.logpdf(X, a, loc=loc, scale=p["scale"]).sum(axis=1)
    if spec.family == "beta":
        return stats.beta.logpdf(X, np.asarray(p["a"])[k], np.asarray(p["b"])[k]).sum(axis=1)
    loc = np.asarray(p["means"], dtype=float)[k]
    return stats.laplace.logpdf(X, loc=loc, scale=p["scale"]).sum(axis=1)


def true_posterior(spec: SimSpec, X):
    """Posterior component probabilities under the generating densities, shape (n, 2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lp = np.column_stack([
        math.log(spec.mixing) + _component_logpdf(spec, X, 0),
        math.log1p(-spec.mixing) + _component_logpdf(spec, X, 1),
    ])
    lp -= lp.max(axis=1, keepdims=True)
    tau = np.exp(lp)
    return tau / tau.sum(axis=1, keepdims=True)


def simulate(spec: SimSpec) -> Dataset:
    """Draw a fully labeled two-component sample; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    z = (rng.random(n) >= spec.mixing).astype(int)
    p = spec.resolved()
    if spec.family == "gaussian":
        means = np.asarray(p["means"], dtype=float)
        noise = rng.multivariate_normal(np.zeros(means.shape[1]), np.asarray(p["cov"], dtype=float), size=n)
        X = means[z] + noise
    elif spec.family == "gamma":
        shapes = np.asarray(p["shapes"], dtype=float)
        X = rng.gamma(shapes[z], p["scale"]) + np.asarray(p["shift"], dtype=float)[z]
    elif spec.family == "beta":
        X = rng.beta(np.asarray(p["a"], dtype=float)[z], np.asarray(p["b"], dtype=float)[z])
    else:
        means = np.asarray(p["means"], dtype=float)
        X = rng.laplace(means[z], p["scale"])
    meta = {"family": spec.family, "seed": spec.seed, "mixing": spec.mixing, "params": p}
    return Dataset(X, z.copy(), z, meta=meta)


# ---------------------------------------------------------------------------
# MAR deletion


def apply_mar_deletion(dataset: Dataset, mechanism, oracle_theta=None, target_rate=None,
                       delta_sq=None, seed=None) -> Dataset:
    """Delete labels with probability ``q(delta**2)`` computed from an oracle posterior.

    ``delta_sq`` may be supplied directly (e.g. from the true non-Gaussian
    posterior); otherwise it is computed from ``oracle_theta``. With
    ``target_rate`` the mechanism intercept is re-calibrated so the expected
    missing fraction equals the target.
    """
    if np.any(dataset.observed_labels == -1):
        raise DataError("MAR deletion expects a fully labeled dataset")
    if delta_sq is None:
        if oracle_theta is None:
            raise ConfigError("need oracle_theta or delta_sq to compute margin confidence")
        delta_sq = margin_confidence(responsibilities(dataset.features, oracle_theta)) ** 2
    delta_sq = np.asarray(delta_sq, dtype=float)
    if target_rate is not None:
        ao = mechanism.as_ao()
        a0 = calibrate_intercept(delta_sq, ao.alpha1, ao.lam, target_rate)
        if isinstance(mechanism, LogitParams):
            mechanism = LogitParams(a0, mechanism.xi1)
        else:
            mechanism = AoParams(a0, ao.alpha1, ao.lam)
    q = missing_prob(delta_sq, mechanism)
    if seed is None:
        seed = dataset.meta.get("seed", 0)
    rng = np.random.default_rng([int(seed), 1])
    missing = rng.random(dataset.n) < q
    observed = np.where(missing, -1, dataset.observed_labels)
    meta = dict(dataset.meta)
    meta.update(
        mechanism=mechanism,
        target_rate=target_rate,
        realized_missing_rate=float(missing.mean()),
        expected_missing_rate=float(np.mean(q)),
    )
    return replace(dataset, observed_labels=observed, meta=meta)


def oracle_delta_sq(spec: SimSpec, dataset: Dataset):
    """Squared margin confidence under the generating model."""
    if spec.family == "gaussian":
        tau = responsibilities(dataset.features, spec.true_theta())
    else:
        tau = true_posterior(spec, dataset.features)
    return margin_confidence(tau) ** 2


def supervised_theta(X, labels, n_components=2):
    """Class-wise sample moments (1/n covariances) from fully labeled data."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    w, mu, cov = [], [], []
    for k in range(n_components):
        Xk = X[labels == k]
        if Xk.shape[0] < 2:
            raise DataError(f"class {k} has fewer than two rows")
        w.append(Xk.shape[0] / X.shape[0])
        mu.append(Xk.mean(axis=0))
        c = np.cov(Xk, rowvar=False, bias=True).reshape(X.shape[1], X.shape[1])
        cov.append(0.5 * (c + c.T))
    return MixtureParams(np.array(w) / np.sum(w), np.array(mu), np.array(cov))


# ---------------------------------------------------------------------------
# MAGIC gamma telescope


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_magic_csv(path) -> Dataset:
    """Read the UCI ``magic04.data`` file (10 numeric columns and a g/h class).

    A header line is accepted and skipped when its first field is not
    numeric. Classes map g -> 0 (the positive, gamma class) and h -> 1.
    """
    rows, labels = [], []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if lineno == 1 and not _is_number(rec[0].strip()):
                continue
            if len(rec) != len(MAGIC_COLUMNS) + 1:
                raise DataError(f"line {lineno}: expected {len(MAGIC_COLUMNS) + 1} fields, got {len(rec)}")
            try:
                vals = [float(f) for f in rec[:-1]]
            except ValueError as exc:
                raise DataError(f"line {lineno}: non-numeric feature ({exc})") from None
            cls = rec[-1].strip()
            if cls not in MAGIC_CLASSES:
                raise DataError(f"line {lineno}: unknown class {cls!r}")
            rows.append(vals)
            labels.append(MAGIC_CLASSES[cls])
    if not rows:
        raise DataError(f"{path}: no data rows")
    if len(rows) != MAGIC_ROWS:
        warnings.warn(f"{path}: {len(rows)} rows, the full MAGIC file has {MAGIC_ROWS}", stacklevel=2)
    y = np.array(labels)
    return Dataset(np.array(rows), y, y.copy(), feature_names=MAGIC_COLUMNS, meta={"source": str(path)})


def preprocess_magic(dataset: Dataset) -> Dataset:
    """Keep fAlpha, fLength, fM3Long, fSize and standardize them (population SD)."""
    names = list(dataset.feature_names)
    missing = [c for c in MAGIC_SELECTED if c not in names]
    if missing:
        raise DataError(f"MAGIC columns not found: {missing}")
    X = dataset.features[:, [names.index(c) for c in MAGIC_SELECTED]]
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    if np.any(scale == 0):
        raise DataError("constant MAGIC column cannot be standardized")
    meta = dict(dataset.meta, center=center, scale=scale)
    return Dataset((X - center) / scale, dataset.observed_labels, dataset.true_labels,
                   feature_names=MAGIC_SELECTED, meta=meta)


def destandardize(dataset: Dataset):
    return dataset.features * dataset.meta["scale"] + dataset.meta["center"]


def write_dataset_csv(dataset: Dataset, path):
    """Write feature columns, true_label, observed_label (empty when missing), missing_flag."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.feature_names, "true_label", "observed_label", "missing_flag"])
        true = dataset.true_labels if dataset.true_labels is not None else [""] * dataset.n
        for x, t, o, m in zip(dataset.features, true, dataset.observed_labels, dataset.missing_flags):
            w.writerow([*(repr(float(v)) for v in x), t, "" if o < 0 else int(o), int(m)])
