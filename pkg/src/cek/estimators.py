"""Average treatment effect estimators and the identities linking them.

Every estimator sums in record order (or stratum / bin order) with a plain
left-to-right accumulation so that the exact algebraic identities between
them can be checked at 1e-12.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_consistent_length

from .data import Dataset, StratumIndex, build_strata, check_support, seqsum
from .exceptions import EstimationError, SupportError
from .outcome import OutcomeModel, fit_outcome_logistic, fit_stratum_means, predict_both_arms
from .propensity import (DEFAULT_CLIP, DEFAULT_K, FeatureSpec, PropensityScores, ScoreBins, bin_scores,
                         propensity_logistic, propensity_sample_proportion)

METHODS = ("adjustment", "iptw", "stratified", "plugin-predicted", "dr")
SUPPORT_POLICIES = ("error", "drop-and-renormalize", "clip-propensity")
IDENTITY_TOL = 1e-12


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass(frozen=True)
class AteReport:
    method: str
    estimate: float
    inputs: Mapping[str, object] = field(default_factory=dict)
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS + ("naive",):
            raise EstimationError(f"unknown method {self.method!r}")
        if not math.isfinite(self.estimate):
            raise EstimationError(f"{self.method}: estimate is not finite")

    def to_dict(self) -> dict:
        return {"method": self.method, "estimate": float(self.estimate),
                "inputs": _jsonable(dict(self.inputs)), "diagnostics": _jsonable(dict(self.diagnostics))}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AteReport":
        extra = set(doc) - {"method", "estimate", "inputs", "diagnostics"}
        if extra:
            raise EstimationError(f"unknown report field(s) {sorted(extra)}")
        return cls(doc["method"], float(doc["estimate"]), dict(doc.get("inputs", {})),
                   dict(doc.get("diagnostics", {})))


def reports_to_json(reports: Sequence[AteReport]) -> str:
    return json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2, sort_keys=True)


def reports_from_json(text: str) -> list[AteReport]:
    doc = json.loads(text)
    return [AteReport.from_dict(r) for r in doc["reports"]]


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_fmt(x) for x in v) + "]"
    return str(v)


def _is_blank(val) -> bool:
    if val is None:
        return True
    if isinstance(val, (list, tuple)):
        return len(val) == 0
    return isinstance(val, (int, float)) and val == 0


def format_table(reports: Sequence[AteReport]) -> str:
    """Aligned plain-text table, one row per report."""
    rows = [("method", "estimate", "inputs", "notes")]
    for r in reports:
        inputs = " ".join(f"{k}={_fmt(v)}" for k, v in r.inputs.items())
        notes = []
        for key in ("support_violations", "dropped_mass", "clipped_records", "fallback_cells", "robustness",
                    "stratified_minus_iptw"):
            val = r.diagnostics.get(key)
            if _is_blank(val):
                continue
            notes.append(f"{key}={_fmt(val)}")
        for chk in r.diagnostics.get("identity_checks", []):
            state = "n/a" if not chk["applicable"] else ("ok" if chk["holds"] else "FAIL")
            notes.append(f"{chk['name']}:{state}")
        rows.append((r.method, f"{r.estimate:.12f}", inputs, " ".join(notes)))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# --- estimators -------------------------------------------------------------

def naive_difference(ds: Dataset) -> float:
    """Treated mean minus control mean, no adjustment."""
    z = ds.treatment
    y = ds.outcome.astype(float)
    n1 = int(np.count_nonzero(z == 1))
    n0 = ds.n - n1
    if n1 == 0 or n0 == 0:
        raise EstimationError("naive difference needs both arms")
    return seqsum(z * y) / n1 - seqsum((1 - z) * y) / n0


def ate_adjustment(index: StratumIndex, support_policy: str = "error", clip=DEFAULT_CLIP) -> AteReport:
    """``sum_x p(x) [mean(Y|Z=1,x) - mean(Y|Z=0,x)]`` over covariate strata.

    ``clip-propensity`` keeps single-arm strata and evaluates them in their
    record-weighted form with the treated fraction clipped to ``clip``.
    """
    if support_policy not in SUPPORT_POLICIES:
        raise EstimationError(f"unknown support policy {support_policy!r}")
    report = check_support(index)
    if report.violations and support_policy == "error":
        raise SupportError(f"common support violated in strata {[list(k) for k in report.violations]}",
                           report.violations)
    n_total = index.n
    dropped_mass = 0.0
    if support_policy == "drop-and-renormalize":
        kept = [s for s in index.strata if s.supported]
        if not kept:
            raise SupportError("every stratum violates common support", report.violations)
        n_total = sum(s.n for s in kept)
        dropped_mass = report.mass
    else:
        kept = list(index.strata)
    estimate = 0.0
    clipped = []
    for s in kept:
        if s.supported:
            estimate += (s.n / n_total) * (s.sum_y_treated / s.n_treated - s.sum_y_control / s.n_control)
        else:
            e = min(max(s.n_treated / s.n, clip[0]), clip[1])
            estimate += s.sum_y_treated / (n_total * e) - s.sum_y_control / (n_total * (1.0 - e))
            clipped.append(list(s.key))
    return AteReport("adjustment", estimate,
                     {"covariates": list(index.covariates), "support_policy": support_policy},
                     {"strata": len(index.strata), "support_violations": [list(k) for k in report.violations],
                      "dropped_mass": dropped_mass, "clipped_strata": clipped,
                      "strata_counts": [[list(s.key), s.n, s.n_treated, s.n_control] for s in index.strata]})


def _checked_scores(ds: Dataset, scores: PropensityScores) -> np.ndarray:
    e = scores.scores
    if e.shape[0] != ds.n:
        raise EstimationError(f"scores cover {e.shape[0]} records, dataset has {ds.n}")
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        bad = np.flatnonzero((e <= 0.0) | (e >= 1.0))[:10].tolist()
        raise EstimationError(f"propensity scores equal to 0 or 1 at records {bad} (division guard)")
    return e


def _checked_predictions(ds: Dataset, predictions) -> tuple[np.ndarray, np.ndarray]:
    y1, y0 = (np.asarray(p, dtype=float) for p in predictions)
    if y1.shape != (ds.n,) or y0.shape != (ds.n,):
        raise EstimationError("predictions must be two vectors with one entry per record")
    if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y0))):
        raise EstimationError("predictions must be finite")
    return y1, y0


def _score_inputs(scores: PropensityScores) -> dict:
    return {"propensity": scores.provenance}


def _score_diagnostics(scores: PropensityScores) -> dict:
    return {"support_violations": [list(k) for k in scores.violations],
            "clipped_records": len(scores.clipped)}


def _iptw_value(z, y, e, n) -> float:
    return seqsum(z * y / e) / n - seqsum((1 - z) * y / (1.0 - e)) / n


def ate_iptw(ds: Dataset, scores: PropensityScores) -> AteReport:
    """``(1/N) sum Z Y / e - (1/N) sum (1-Z) Y / (1-e)``."""
    e = _checked_scores(ds, scores)
    value = _iptw_value(ds.treatment, ds.outcome.astype(float), e, ds.n)
    return AteReport("iptw", value, _score_inputs(scores), _score_diagnostics(scores))


def ate_stratified(ds: Dataset, bins: ScoreBins) -> AteReport:
    """Binned IPTW: each bin uses its treated fraction as the common score."""
    if bins.n_total != ds.n:
        raise EstimationError("bins do not cover the dataset")
    for b in range(bins.k):
        if bins.n_treated[b] == 0 or bins.n_control[b] == 0:
            raise EstimationError(f"bin {b + 1} has a single treatment arm "
                                  f"(treated={int(bins.n_treated[b])}, control={int(bins.n_control[b])})")
    z = ds.treatment
    y = ds.outcome.astype(float)
    treated_part = 0.0
    control_part = 0.0
    for b in range(bins.k):
        member = bins.labels == b + 1
        r = float(bins.r[b])
        treated_part += r * (seqsum(z * y * member) / int(bins.n_treated[b]))
        control_part += r * (seqsum((1 - z) * y * member) / int(bins.n_control[b]))
    value = treated_part - control_part
    diagnostics = {"k": bins.k, "strategy": bins.strategy, "r": bins.r.tolist(), "bin_scores": bins.e.tolist(),
                   "bin_counts": [[int(a), int(b)] for a, b in zip(bins.n_treated, bins.n_control)]}
    e = bins.scores.scores
    if np.all((e > 0.0) & (e < 1.0)):
        diagnostics["stratified_minus_iptw"] = value - _iptw_value(z, y, e, ds.n)
    else:
        diagnostics["stratified_minus_iptw"] = None
    return AteReport("stratified", value, {"k": bins.k, **_score_inputs(bins.scores)}, diagnostics)


def ate_plugin_predicted(ds: Dataset, scores: PropensityScores, predictions) -> AteReport:
    """IPTW with the arm prediction in place of the observed outcome."""
    e = _checked_scores(ds, scores)
    y1, y0 = _checked_predictions(ds, predictions)
    z = ds.treatment
    value = seqsum(z * y1 / e) / ds.n - seqsum((1 - z) * y0 / (1.0 - e)) / ds.n
    return AteReport("plugin-predicted", value, _score_inputs(scores), _score_diagnostics(scores))


def correction_term(ds: Dataset, scores: PropensityScores, predictions) -> float:
    """``(1/N) sum (Z-e) yhat1 / e + (1/N) sum (Z-e) yhat0 / (1-e)``."""
    e = _checked_scores(ds, scores)
    y1, y0 = _checked_predictions(ds, predictions)
    z = ds.treatment
    return seqsum((z - e) * y1 / e) / ds.n + seqsum((z - e) * y0 / (1.0 - e)) / ds.n


def correction_term_difference_form(ds: Dataset, scores: PropensityScores, predictions) -> float:
    """Same quantity as :func:`correction_term`, as plug-in minus the mean prediction contrast."""
    plugin = ate_plugin_predicted(ds, scores, predictions).estimate
    y1, y0 = _checked_predictions(ds, predictions)
    return plugin - (seqsum(y1) / ds.n - seqsum(y0) / ds.n)


def dr_expanded(ds: Dataset, scores: PropensityScores, predictions) -> float:
    """Doubly robust estimate written as one sum per arm."""
    e = _checked_scores(ds, scores)
    y1, y0 = _checked_predictions(ds, predictions)
    z = ds.treatment
    y = ds.outcome.astype(float)
    treated = seqsum(z * y / e - (z - e) * y1 / e) / ds.n
    control = seqsum((1 - z) * y / (1.0 - e) + (z - e) * y0 / (1.0 - e)) / ds.n
    return treated - control


def ate_dr(ds: Dataset, scores: PropensityScores, predictions, outcome_kind: str | None = None) -> AteReport:
    """IPTW minus the correction term, cross-checked against the expanded sum.

    ``outcome_kind`` (the outcome model kind behind ``predictions``) only
    feeds the robustness note.
    """
    iptw = ate_iptw(ds, scores).estimate
    corr = correction_term(ds, scores, predictions)
    value = iptw - corr
    expanded = dr_expanded(ds, scores, predictions)
    legs = []
    if scores.provenance == "sample-proportion" and not scores.violations:
        legs.append("propensity=sample-proportion")
    if outcome_kind == "stratum-mean":
        legs.append("outcome=stratum-mean")
    diagnostics = _score_diagnostics(scores)
    diagnostics.update({
        "iptw": iptw,
        "correction_term": corr,
        "expanded_form": expanded,
        "two_form_abs_diff": abs(value - expanded),
        "robustness": legs or ["none guaranteed exactly"],
    })
    inputs = _score_inputs(scores)
    if outcome_kind is not None:
        inputs["outcome"] = outcome_kind
    return AteReport("dr", value, inputs, diagnostics)


# --- orchestration ----------------------------------------------------------

@dataclass(frozen=True)
class EstimateConfig:
    covariates: Sequence[str] | None = None
    propensity: str = "sample-proportion"
    propensity_features: FeatureSpec = FeatureSpec()
    external_scores: PropensityScores | None = None
    outcome: str = "stratum-mean"
    outcome_features: FeatureSpec = FeatureSpec()
    external_outcome: OutcomeModel | None = None
    k: int = DEFAULT_K
    bin_strategy: str = "quantile"
    support_policy: str = "error"
    clip: tuple[float, float] = DEFAULT_CLIP
    threshold: bool = False


def _check(name, applicable, a=None, b=None, tol=IDENTITY_TOL):
    if not applicable:
        return {"name": name, "applicable": False, "holds": None, "abs_diff": None, "tol": tol}
    diff = abs(a - b)
    return {"name": name, "applicable": True, "holds": bool(diff <= tol), "abs_diff": diff, "tol": tol}


@dataclass(frozen=True)
class FittedInputs:
    dataset: Dataset
    index: StratumIndex
    scores: PropensityScores
    outcome_model: OutcomeModel
    predictions: tuple[np.ndarray, np.ndarray]
    dropped_records: int = 0


def fit_inputs(ds: Dataset, config: EstimateConfig = EstimateConfig()) -> FittedInputs:
    """Fit the shared propensity and outcome inputs once for all estimators."""
    if config.support_policy not in SUPPORT_POLICIES:
        raise EstimationError(f"unknown support policy {config.support_policy!r}")
    covs = ds.covariate_names if config.covariates is None else tuple(config.covariates)
    index = build_strata(ds, covs)
    support = check_support(index)
    dropped = 0
    if support.violations:
        if config.support_policy == "error":
            raise SupportError(f"common support violated in strata {[list(k) for k in support.violations]}",
                               support.violations)
        if config.support_policy == "drop-and-renormalize":
            keep = np.sort(np.concatenate([s.rows for s in index.strata if s.supported] or [np.array([], int)]))
            if keep.size == 0:
                raise SupportError("every stratum violates common support", support.violations)
            dropped = ds.n - keep.size
            ds = ds.take(keep)
            index = build_strata(ds, covs)
    if config.propensity == "sample-proportion":
        scores = propensity_sample_proportion(index, config.clip)
    elif config.propensity == "logistic":
        scores = propensity_logistic(ds, replace(config.propensity_features, covariates=covs), config.clip)
    elif config.propensity == "external":
        if config.external_scores is None:
            raise EstimationError("external propensity selected but no scores given")
        scores = config.external_scores
    else:
        raise EstimationError(f"unknown propensity backend {config.propensity!r}")
    if len(scores) != ds.n:
        raise EstimationError(f"scores cover {len(scores)} records, dataset has {ds.n}")
    if config.outcome == "stratum-mean":
        model = fit_stratum_means(ds, index)
    elif config.outcome == "logistic":
        model = fit_outcome_logistic(ds, replace(config.outcome_features, covariates=covs))
    elif config.outcome == "external":
        if config.external_outcome is None:
            raise EstimationError("external outcome selected but no predictions given")
        model = config.external_outcome
    else:
        raise EstimationError(f"unknown outcome backend {config.outcome!r}")
    predictions = predict_both_arms(model, ds, config.threshold)
    return FittedInputs(ds, index, scores, model, predictions, dropped)


def estimate_all(ds: Dataset, config: EstimateConfig = EstimateConfig(),
                 methods: Sequence[str] = METHODS) -> list[AteReport]:
    """Run the requested estimators on shared fitted inputs.

    Reports carry ``identity_checks`` for the exact relations that hold
    under the chosen configuration; the others are marked not applicable.
    """
    for m in methods:
        if m not in METHODS:
            raise EstimationError(f"unknown method {m!r}")
    fitted = fit_inputs(ds, config)
    ds, index, scores, model, preds = fitted.dataset, fitted.index, fitted.scores, fitted.outcome_model, fitted.predictions
    adjustment = ate_adjustment(index, "clip-propensity" if config.support_policy == "clip-propensity" else "error",
                                config.clip)
    iptw = ate_iptw(ds, scores)
    sample_prop = scores.provenance == "sample-proportion" and tuple(scores.covariates) == tuple(index.covariates)
    out = []
    for method in methods:
        if method == "adjustment":
            diag = dict(adjustment.diagnostics)
            diag["dropped_records"] = fitted.dropped_records
            if fitted.dropped_records:
                diag["dropped_mass"] = fitted.dropped_records / (ds.n + fitted.dropped_records)
            report = replace(adjustment, inputs={**adjustment.inputs, "support_policy": config.support_policy},
                             diagnostics=diag)
        elif method == "iptw":
            diag = dict(iptw.diagnostics)
            diag["identity_checks"] = [_check("iptw_equals_adjustment", sample_prop, iptw.estimate,
                                              adjustment.estimate)]
            report = replace(iptw, diagnostics=diag)
        elif method == "stratified":
            bins = bin_scores(scores, ds.treatment, config.k, config.bin_strategy)
            report = ate_stratified(ds, bins)
            aligned = all(np.all(scores.scores[bins.labels == b + 1] == bins.e[b]) for b in range(bins.k))
            diag = dict(report.diagnostics)
            diag["identity_checks"] = [_check("stratified_equals_iptw", aligned, report.estimate, iptw.estimate)]
            report = replace(report, diagnostics=diag)
        elif method == "plugin-predicted":
            report = ate_plugin_predicted(ds, scores, preds)
            report = replace(report, inputs={**report.inputs, "outcome": model.kind},
                             diagnostics={**report.diagnostics, "fallback_cells": len(model.fallback_cells)})
        else:
            report = ate_dr(ds, scores, preds, model.kind)
            d = report.diagnostics
            outcome_exact = (model.kind == "stratum-mean" and scores.stratum_constant
                             and not model.fallback_cells and tuple(model.covariates) == tuple(index.covariates)
                             and not config.threshold)
            diag = dict(d)
            diag["fallback_cells"] = len(model.fallback_cells)
            diag["identity_checks"] = [
                _check("correction_vanishes", sample_prop, d["correction_term"], 0.0),
                _check("dr_equals_adjustment", outcome_exact or sample_prop, report.estimate, adjustment.estimate),
                _check("dr_two_forms", True, report.estimate, d["expanded_form"]),
            ]
            report = replace(report, diagnostics=diag)
        out.append(report)
    return out


class AteEstimator(BaseEstimator):
    """Estimator-style front end: ``fit(X, z, y)`` then read ``ate_``.

    ``X`` holds integer covariate codes (one column per covariate).  All
    five estimates are computed on shared inputs and kept in ``reports_``;
    ``ate_`` is the one selected by ``method``.
    """

    def __init__(self, method="dr", propensity="sample-proportion", outcome="stratum-mean", k=DEFAULT_K,
                 support_policy="error", clip=DEFAULT_CLIP, propensity_encoding="onehot",
                 outcome_encoding="onehot", interactions=False):
        self.method = method
        self.propensity = propensity
        self.outcome = outcome
        self.k = k
        self.support_policy = support_policy
        self.clip = clip
        self.propensity_encoding = propensity_encoding
        self.outcome_encoding = outcome_encoding
        self.interactions = interactions

    def fit(self, X, z, y):
        X = check_array(X, dtype=np.int64, ensure_min_features=0)
        z = np.asarray(z)
        y = np.asarray(y)
        check_consistent_length(X, z, y)
        if self.method not in METHODS:
            raise EstimationError(f"unknown method {self.method!r}")
        ds = Dataset.from_arrays(X, z, y, [f"x{j}" for j in range(X.shape[1])])
        config = EstimateConfig(
            propensity=self.propensity,
            propensity_features=FeatureSpec(None, self.propensity_encoding, self.interactions),
            outcome=self.outcome,
            outcome_features=FeatureSpec(None, self.outcome_encoding, self.interactions),
            k=self.k, support_policy=self.support_policy, clip=tuple(self.clip))
        self.reports_ = {r.method: r for r in estimate_all(ds, config)}
        self.report_ = self.reports_[self.method]
        self.ate_ = self.report_.estimate
        self.n_features_in_ = X.shape[1]
        return self
