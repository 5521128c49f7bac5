"""Outcome regressions giving both-arm predictions for every record."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import Dataset, StratumIndex, build_strata, seqsum
from .exceptions import DataError, EstimationError
from .logistic import DesignEncoder, LogisticRegressionIRLS
from .propensity import FeatureSpec

KINDS = ("stratum-mean", "logistic", "external")


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    """Fitted ``(z, x) -> E[Y | Z=z, X=x]``.

    For ``stratum-mean`` models ``table`` maps ``(z, stratum key)`` to the
    cell mean and ``counts`` to the number of records behind it; cells with
    no records hold the arm marginal mean and appear in ``fallback_cells``.
    """

    kind: str
    covariates: tuple[str, ...]
    table: Mapping[tuple, float] = field(default_factory=dict)
    counts: Mapping[tuple, int] = field(default_factory=dict)
    fallback_cells: tuple[tuple, ...] = ()
    arm_means: tuple[float, float] = (math.nan, math.nan)
    unseen: str = "error"
    encoder: DesignEncoder | None = None
    regressor: LogisticRegressionIRLS | None = None
    external: tuple[np.ndarray, np.ndarray] | None = None
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def predict(self, z: int, key: tuple) -> float:
        key = tuple(int(v) for v in key)
        if self.kind == "stratum-mean":
            cell = (int(z), key)
            if cell in self.table:
                return self.table[cell]
            if self.unseen == "fallback":
                return self.arm_means[int(z)]
            raise EstimationError(f"covariate configuration {key} unseen by the stratum-mean model")
        if self.kind == "logistic":
            D = self.encoder.transform(np.array([(int(z),) + key], dtype=np.int64))
            return float(self.regressor.predict_proba(D)[0, 1])
        raise EstimationError("external outcome models only predict for their own records")


def fit_stratum_means(ds: Dataset, index: StratumIndex | None = None, unseen: str = "error") -> OutcomeModel:
    if index is None:
        index = build_strata(ds)
    if unseen not in ("error", "fallback"):
        raise EstimationError(f"unseen policy must be 'error' or 'fallback', got {unseen!r}")
    y = ds.outcome.astype(float)
    z = ds.treatment
    arm = []
    for a in (0, 1):
        sel = y[z == a]
        arm.append(seqsum(sel) / sel.size if sel.size else math.nan)
    table, counts, fallback = {}, {}, []
    for s in index.strata:
        for a, n_a, total in ((1, s.n_treated, s.sum_y_treated), (0, s.n_control, s.sum_y_control)):
            counts[(a, s.key)] = n_a
            if n_a:
                table[(a, s.key)] = total / n_a
            else:
                if math.isnan(arm[a]):
                    raise EstimationError(f"arm Z={a} has no records; cannot fill empty cell {s.key}")
                table[(a, s.key)] = arm[a]
                fallback.append((a, s.key))
    return OutcomeModel("stratum-mean", index.covariates, table, counts, tuple(fallback), (arm[0], arm[1]), unseen)


def fit_outcome_logistic(ds: Dataset, features: FeatureSpec = FeatureSpec()) -> OutcomeModel:
    """Single logistic fit of Y on (Z, encoded covariates) by IRLS."""
    if ds.outcome_kind != "binary":
        raise EstimationError("logistic outcome model needs a binary outcome")
    names = ds.covariate_names if features.covariates is None else tuple(features.covariates)
    X = np.column_stack([ds.treatment, ds.covariate_matrix(names)])
    encoder = DesignEncoder(features.encoding, features.interactions, (ds.treatment_name,) + names).fit(X)
    D = encoder.transform(X)
    model = LogisticRegressionIRLS(feature_names=encoder.feature_names_).fit(D, ds.outcome)
    diagnostics = {"n_iter": model.n_iter_, "converged": model.converged_, "separation": model.separated_,
                   "coefficients": dict(zip(encoder.feature_names_, map(float, model.coef_)))}
    return OutcomeModel("logistic", names, encoder=encoder, regressor=model, diagnostics=diagnostics)


def outcome_external(yhat1, yhat0) -> OutcomeModel:
    y1 = np.array(yhat1, dtype=float)
    y0 = np.array(yhat0, dtype=float)
    if y1.shape != y0.shape or y1.ndim != 1 or not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y0))):
        raise EstimationError("external predictions must be two finite vectors of equal length")
    y1.setflags(write=False)
    y0.setflags(write=False)
    return OutcomeModel("external", (), external=(y1, y0))


def read_predictions_csv(path, n: int | None = None) -> OutcomeModel:
    """Load ``record_index,yhat1,yhat0`` rows as an external model."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or not {"record_index", "yhat1", "yhat0"} <= set(rows[0]):
        raise DataError(f"{path}: expected columns record_index,yhat1,yhat0")
    vals = {}
    for line, row in enumerate(rows, start=1):
        try:
            vals[int(row["record_index"])] = (float(row["yhat1"]), float(row["yhat0"]))
        except (TypeError, ValueError):
            raise DataError(f"{path}: row {line}: malformed values") from None
    size = len(vals) if n is None else n
    if sorted(vals) != list(range(size)):
        raise DataError(f"{path}: record indices must cover 0..{size - 1} exactly")
    return outcome_external([vals[i][0] for i in range(size)], [vals[i][1] for i in range(size)])


def write_predictions_csv(path, yhat1, yhat0) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("record_index,yhat1,yhat0\n")
        for i, (a, b) in enumerate(zip(yhat1, yhat0)):
            fh.write(f"{i},{float(a)!r},{float(b)!r}\n")


def _unique_rows(X):
    if X.shape[1] == 0:
        return [()], np.zeros(X.shape[0], dtype=np.int64)
    keys, inverse = np.unique(X, axis=0, return_inverse=True)
    return [tuple(int(v) for v in k) for k in keys], inverse.reshape(-1)


def predict_both_arms(model: OutcomeModel, ds: Dataset, threshold: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-record ``(yhat1, yhat0)``; ``threshold`` maps predictions to {0, 1} (ties to 1)."""
    if model.kind == "external":
        y1, y0 = model.external
        if y1.shape[0] != ds.n:
            raise EstimationError(f"external predictions cover {y1.shape[0]} records, dataset has {ds.n}")
        y1, y0 = y1.copy(), y0.copy()
    else:
        X = ds.covariate_matrix(model.covariates)
        if model.kind == "logistic":
            n = ds.n
            D1 = model.encoder.transform(np.column_stack([np.ones(n, dtype=np.int64), X]))
            D0 = model.encoder.transform(np.column_stack([np.zeros(n, dtype=np.int64), X]))
            y1 = model.regressor.predict_proba(D1)[:, 1]
            y0 = model.regressor.predict_proba(D0)[:, 1]
        else:
            keys, inverse = _unique_rows(X)
            both = np.array([(model.predict(1, k), model.predict(0, k)) for k in keys]).reshape(-1, 2)
            y1 = both[inverse, 0]
            y0 = both[inverse, 1]
    if threshold:
        y1 = (y1 >= 0.5).astype(float)
        y0 = (y0 >= 0.5).astype(float)
    return y1, y0
