"""Experiment drivers behind the CLI subcommands.

Every driver returns a :class:`RunRecord`; writing files is left to
:mod:`marmix.cli`. Replicate ``i`` uses seed ``base_seed + i``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import data
from .ecm import EcmConfig
from .estimators import LogisticBaseline, MarMixtureClassifier
from .exceptions import ConfigError
from .links import AoParams, LogitParams
from .metrics import SWEEP_GRID, evaluate, threshold_sweep
from .mixture import entropy_quadratic_approx, shannon_entropy

EXPERIMENTS = ("approx-check", "simulate-fit", "robustness", "missing-sweep", "threshold-sweep", "magic")
METRIC_KEYS = ("auc", "logloss", "brier", "threshold_opt", "precision_opt", "recall_opt", "f1_opt")
POSITIVE_CLASS = 0
EVALUATION_POPULATION = "all rows (labeled and unlabeled), scored against true labels"


@dataclass
class MarConfig:
    """Label-deletion mechanism: AO (or logit) in squared margin confidence."""

    link: str = "ao"
    slope: float = -8.0
    lam: float = 0.5
    target_rate: float = 0.7

    def mechanism(self):
        if self.link == "logit":
            return LogitParams(0.0, self.slope)
        if self.link != "ao":
            raise ConfigError(f"unknown MAR link {self.link!r}")
        return AoParams(0.0, self.slope, self.lam)


@dataclass
class ExperimentConfig:
    experiment: str = "simulate-fit"
    sim: dict = field(default_factory=dict)
    mar: dict = field(default_factory=dict)
    ecm: dict = field(default_factory=dict)
    replicates: int = 20
    seed: int = 0
    output_dir: str = "results"
    families: list = field(default_factory=lambda: ["gamma", "beta", "laplace"])
    rates: list = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9])
    grid_size: int = 1001
    magic_csv: str | None = None
    magic_missing_sweep: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if int(self.replicates) < 1:
            raise ConfigError("replicates must be >= 1")
        if int(self.grid_size) < 2:
            raise ConfigError("grid_size must be >= 2")
        for r in self.rates:
            if not 0.01 < float(r) < 0.99:
                raise ConfigError(f"missing rate {r} outside (0.01, 0.99)")
        # fail early on bad nested blocks
        self.mar_config()
        self.ecm_config()
        self.sim_spec()

    def mar_config(self) -> MarConfig:
        try:
            return MarConfig(**self.mar)
        except TypeError as exc:
            raise ConfigError(f"bad mar block: {exc}") from None

    def ecm_config(self) -> EcmConfig:
        kw = dict(self.ecm)
        if "lambda_bounds" in kw:
            kw["lambda_bounds"] = tuple(kw["lambda_bounds"])
        try:
            return EcmConfig(**kw)
        except TypeError as exc:
            raise ConfigError(f"bad ecm block: {exc}") from None

    def sim_spec(self, family=None, seed=0) -> data.SimSpec:
        kw = dict(self.sim)
        if family is not None:
            if kw.get("family", "gaussian") != family:
                kw.pop("params", None)
            kw["family"] = family
        try:
            return data.SimSpec(seed=seed, **kw)
        except TypeError as exc:
            raise ConfigError(f"bad sim block: {exc}") from None

    def to_dict(self) -> dict:
        """Config with the nested blocks expanded to their resolved values."""
        out = asdict(self)
        out["mar"] = asdict(self.mar_config())
        ecm = asdict(self.ecm_config())
        ecm["lambda_bounds"] = list(ecm["lambda_bounds"])
        out["ecm"] = ecm
        spec = self.sim_spec()
        out["sim"] = {"family": spec.family, "n": spec.n, "mixing": spec.mixing, "params": spec.resolved()}
        return out

    def digest(self) -> str:
        """SHA-256 of the resolved config; the output location does not enter the hash."""
        cfg = self.to_dict()
        cfg.pop("output_dir")
        blob = json.dumps(cfg, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**raw)


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# helpers


def make_estimators(ecm_cfg: EcmConfig, names=("ecm-ao", "ecm-logit", "logistic")):
    common = dict(max_iter=ecm_cfg.max_iters, tol=ecm_cfg.rel_tol, ridge=ecm_cfg.ridge,
                  lambda_bounds=ecm_cfg.lambda_bounds, random_state=ecm_cfg.seed)
    table = {
        "ecm-ao": lambda: MarMixtureClassifier(link="ao", lam=ecm_cfg.lam, **common),
        "ecm-logit": lambda: MarMixtureClassifier(link="logit", **common),
        "logistic": lambda: LogisticBaseline(),
    }
    return {name: table[name]() for name in names}


def positive_scores(estimator, X):
    col = int(np.flatnonzero(estimator.classes_ == POSITIVE_CLASS)[0])
    return estimator.predict_proba(X)[:, col]


def _fit_summary(est):
    if not hasattr(est, "fit_report_"):
        m = est.model_
        return {"iterations": m.n_iter, "converged": not m.separated, "separated": m.separated}
    rep = est.fit_report_
    miss = est.params_.missingness.as_ao()
    return {
        "iterations": rep.iterations,
        "converged": rep.converged,
        "final_loglik": float(rep.loglik_trace[-1]),
        "alpha0": miss.alpha0,
        "alpha1": miss.alpha1,
        "lam": miss.lam,
    }


def masked_simulation(cfg: ExperimentConfig, family, rate, seed):
    spec = cfg.sim_spec(family, seed)
    full = data.simulate(spec)
    mar = cfg.mar_config()
    return data.apply_mar_deletion(full, mar.mechanism(), target_rate=rate,
                                   delta_sq=data.oracle_delta_sq(spec, full), seed=seed), spec


def evaluate_estimators(ds: data.Dataset, estimators):
    """Fit each estimator on ``ds`` and score it on all rows against the true labels."""
    truth = (ds.true_labels == POSITIVE_CLASS).astype(int)
    out = {}
    for name, est in estimators.items():
        est.fit(ds.features, ds.observed_labels)
        scores = positive_scores(est, ds.features)
        out[name] = (evaluate(scores, truth), scores, _fit_summary(est))
    return out, truth


def aggregate(rows, keys, metrics=METRIC_KEYS):
    """Mean and sample SD of each metric over rows sharing ``keys``."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for gkey, members in groups.items():
        agg = dict(zip(keys, gkey))
        agg["n"] = len(members)
        for m in metrics:
            vals = np.array([r[m] for r in members], dtype=float)
            agg[f"{m}_mean"] = float(vals.mean())
            agg[f"{m}_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(agg)
    return out


def _record(cfg):
    rec = RunRecord(config=cfg.to_dict(), config_hash=cfg.digest())
    rec.notes.append(f"evaluation population: {EVALUATION_POPULATION}")
    rec.notes.append(f"positive class: component {POSITIVE_CLASS}")
    return rec


# ---------------------------------------------------------------------------
# drivers


def approx_check(grid_size=1001, upper=1.0):
    """Exact two-class entropy and its quadratic approximation on a grid of delta**2."""
    m2 = np.linspace(0.0, upper, int(grid_size))
    delta = np.sqrt(m2)
    tau = np.column_stack([(1 + delta) / 2, (1 - delta) / 2])
    return m2, shannon_entropy(tau), entropy_quadratic_approx(delta)


def run_approx_check(cfg: ExperimentConfig) -> RunRecord:
    rec = _record(cfg)
    m2, h, approx = approx_check(cfg.grid_size)
    rec.tables["approx_check"] = {
        "columns": ["m2", "H_exact", "H_approx"],
        "rows": [tuple(r) for r in np.column_stack([m2, h, approx]).tolist()],
        "header": {"vertical_marker_m2": 0.36},
    }
    inside = m2 <= 0.36
    rec.notes.append(f"max |H - approx| on m2 <= 0.36: {np.max(np.abs(h - approx)[inside]):.6f}")
    return rec


def _replicates(cfg, families, rates, estimators_for, rec):
    ecm_cfg = cfg.ecm_config()
    for family in families:
        for rate in rates:
            for i in range(cfg.replicates):
                seed = cfg.seed + i
                ds, _ = masked_simulation(cfg, family, rate, seed)
                results, _ = evaluate_estimators(ds, make_estimators(ecm_cfg, estimators_for))
                for name, (report, _, fit_info) in results.items():
                    row = {"family": family, "rate": float(rate), "replicate": i, "seed": seed,
                           "estimator": name, "realized_missing_rate": ds.missing_rate}
                    row.update(report.summary())
                    row.update({f"fit_{k}": v for k, v in fit_info.items()})
                    rec.rows.append(row)
                if i == 0 and rate == rates[0]:
                    for name, (report, _, _) in results.items():
                        rec.tables[f"roc_{family}_{name}"] = {
                            "columns": ["fpr", "tpr"], "rows": report.roc_points.tolist(), "header": {}}


def run_simulate_fit(cfg: ExperimentConfig) -> RunRecord:
    rec = _record(cfg)
    family = cfg.sim.get("family", "gaussian")
    rate = cfg.mar_config().target_rate
    _replicates(cfg, [family], [rate], ("ecm-ao", "ecm-logit", "logistic"), rec)
    rec.aggregates = aggregate(rec.rows, ("family", "estimator"))
    return rec


def run_robustness(cfg: ExperimentConfig) -> RunRecord:
    rec = _record(cfg)
    rate = cfg.mar_config().target_rate
    _replicates(cfg, list(cfg.families), [rate], ("ecm-ao", "logistic"), rec)
    rec.aggregates = aggregate(rec.rows, ("family", "estimator"))
    return rec


def run_missing_sweep(cfg: ExperimentConfig) -> RunRecord:
    rec = _record(cfg)
    family = cfg.sim.get("family", "gaussian")
    rates = [float(r) for r in cfg.rates]
    _replicates(cfg, [family], rates, ("ecm-ao", "logistic"), rec)
    rec.aggregates = aggregate(rec.rows, ("family", "rate", "estimator"))
    rec.tables["missing_sweep"] = _sweep_table(rec.aggregates, rates)
    return rec


def _sweep_table(aggregates, rates):
    lookup = {(a["rate"], a["estimator"]): a["auc_mean"] for a in aggregates}
    rows = [(r, lookup[(r, "ecm-ao")], lookup[(r, "logistic")]) for r in rates]
    return {"columns": ["rate", "auc_ecm_ao", "auc_logistic"], "rows": rows, "header": {}}


def _threshold_rows(results, truth, grid=SWEEP_GRID):
    rows = []
    for name, (_, scores, _) in results.items():
        for thr, precision, recall, accuracy in threshold_sweep(scores, truth, grid):
            for metric, value in (("precision", precision), ("recall", recall), ("accuracy", accuracy)):
                rows.append((thr, metric, name, value))
    return {"columns": ["threshold", "metric", "estimator", "value"], "rows": rows, "header": {}}


def run_threshold_sweep(cfg: ExperimentConfig) -> RunRecord:
    rec = _record(cfg)
    family = cfg.sim.get("family", "gaussian")
    ds, _ = masked_simulation(cfg, family, cfg.mar_config().target_rate, cfg.seed)
    results, truth = evaluate_estimators(ds, make_estimators(cfg.ecm_config(), ("ecm-ao", "logistic")))
    for name, (report, _, fit_info) in results.items():
        rec.rows.append({"estimator": name, "realized_missing_rate": ds.missing_rate,
                         **report.summary(), **{f"fit_{k}": v for k, v in fit_info.items()}})
    rec.tables["threshold_sweep"] = _threshold_rows(results, truth)
    return rec


def magic_dataset(path, mar: MarConfig, rate, seed):
    """Load, preprocess and mask the MAGIC data.

    Margin confidence for deletion comes from a preliminary Gaussian mixture
    fitted to all rows with their true labels, since no generating model exists.
    """
    raw = data.load_magic_csv(path)
    ds = data.preprocess_magic(raw)
    prelim = data.supervised_theta(ds.features, ds.true_labels)
    return data.apply_mar_deletion(ds, mar.mechanism(), oracle_theta=prelim, target_rate=rate, seed=seed)


def run_magic(cfg: ExperimentConfig, csv_path=None) -> RunRecord:
    path = csv_path or cfg.magic_csv
    if not path:
        raise ConfigError("the magic experiment needs a CSV path (--csv or magic_csv)")
    rec = _record(cfg)
    mar = cfg.mar_config()
    ds = magic_dataset(path, mar, mar.target_rate, cfg.seed)
    rec.notes.append(f"rows={ds.n}, features={list(ds.feature_names)}, realized missing={ds.missing_rate:.4f}")
    results, truth = evaluate_estimators(ds, make_estimators(cfg.ecm_config(), ("ecm-ao", "logistic")))
    for name, (report, _, fit_info) in results.items():
        rec.rows.append({"estimator": name, "rate": mar.target_rate, "replicate": 0, "seed": cfg.seed,
                         "realized_missing_rate": ds.missing_rate, **report.summary(),
                         **{f"fit_{k}": v for k, v in fit_info.items()}})
    rec.tables["threshold_sweep"] = _threshold_rows(results, truth)
    if cfg.magic_missing_sweep:
        sweep_rows = []
        for rate in [float(r) for r in cfg.rates]:
            for i in range(cfg.replicates):
                d_i = magic_dataset(path, mar, rate, cfg.seed + i)
                res_i, _ = evaluate_estimators(d_i, make_estimators(cfg.ecm_config(), ("ecm-ao", "logistic")))
                for name, (report, _, _) in res_i.items():
                    sweep_rows.append({"rate": rate, "replicate": i, "seed": cfg.seed + i, "estimator": name,
                                       "realized_missing_rate": d_i.missing_rate, **report.summary()})
        aggs = aggregate(sweep_rows, ("rate", "estimator"))
        rec.aggregates = aggs
        cols = list(sweep_rows[0])
        rec.tables["magic_sweep_replicates"] = {
            "columns": cols, "rows": [[r[c] for c in cols] for r in sweep_rows], "header": {}}
        rec.tables["missing_sweep"] = _sweep_table(aggs, [float(r) for r in cfg.rates])
    return rec


DRIVERS = {
    "approx-check": run_approx_check,
    "simulate-fit": run_simulate_fit,
    "robustness": run_robustness,
    "missing-sweep": run_missing_sweep,
    "threshold-sweep": run_threshold_sweep,
    "magic": run_magic,
}

