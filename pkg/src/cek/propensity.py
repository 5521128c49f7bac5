"""Propensity scores ``e(x) = P(Z=1 | X=x)`` and score binning."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset, StratumIndex, build_strata, seqsum
from .exceptions import DataError, EstimationError
from .logistic import DesignEncoder, LogisticRegressionIRLS

DEFAULT_CLIP = (1e-6, 1.0 - 1e-6)
DEFAULT_K = 5
PROVENANCES = ("sample-proportion", "logistic", "external")


def _check_clip(clip):
    lo, hi = float(clip[0]), float(clip[1])
    if not 0.0 < lo <= hi < 1.0:
        raise EstimationError(f"clip bounds must satisfy 0 < low <= high < 1, got {clip}")
    return lo, hi


@dataclass(frozen=True, eq=False)
class PropensityScores:
    scores: np.ndarray
    provenance: str
    clip: tuple[float, float] = DEFAULT_CLIP
    covariates: tuple[str, ...] = ()
    stratum_scores: Mapping[tuple, float] | None = None
    violations: tuple[tuple, ...] = ()
    clipped: tuple[int, ...] = ()
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.scores, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)
        if self.provenance not in PROVENANCES:
            raise EstimationError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return int(self.scores.shape[0])

    @property
    def stratum_constant(self) -> bool:
        """Whether scores are a function of the covariate stratum."""
        return self.stratum_scores is not None


def _clip_scores(raw, clip):
    lo, hi = clip
    out = np.array(raw, dtype=float)
    bad = np.flatnonzero((out < lo) | (out > hi))
    out[bad] = np.clip(out[bad], lo, hi)
    return out, tuple(int(i) for i in bad)


def propensity_sample_proportion(index: StratumIndex, clip=DEFAULT_CLIP) -> PropensityScores:
    """Treated fraction within each covariate stratum.

    Strata with no treated or no control records get their score clipped to
    the bounds and are listed as violations.
    """
    clip = _check_clip(clip)
    if len(index) == 0:
        raise EstimationError("stratum index is empty")
    per_stratum = {}
    violations = []
    for s in index.strata:
        e = s.n_treated / s.n
        if not s.supported:
            violations.append(s.key)
            e = min(max(e, clip[0]), clip[1])
        per_stratum[s.key] = e
    values = np.array([per_stratum[s.key] for s in index.strata])
    scores = values[index.record_stratum]
    clipped = tuple(int(i) for s in index.strata if not s.supported for i in s.rows)
    return PropensityScores(scores, "sample-proportion", clip, index.covariates, per_stratum,
                            tuple(violations), tuple(sorted(clipped)))


@dataclass(frozen=True)
class FeatureSpec:
    """Covariates (``None`` = all) and their encoding for a logistic fit."""

    covariates: Sequence[str] | None = None
    encoding: str = "onehot"
    interactions: bool = False

    @classmethod
    def parse(cls, text: str, covariates=None) -> "FeatureSpec":
        """``onehot``, ``onehot+interactions`` or ``saturated``."""
        parts = text.split("+")
        enc = parts[0]
        extras = set(parts[1:])
        if enc not in ("onehot", "saturated") or extras - {"interactions"}:
            raise EstimationError(f"unknown feature spec {text!r}")
        return cls(covariates, enc, "interactions" in extras)


def _stratum_map(index: StratumIndex, scores: np.ndarray) -> dict:
    return {s.key: float(scores[s.rows[0]]) for s in index.strata}


def propensity_logistic(ds: Dataset, features: FeatureSpec = FeatureSpec(), clip=DEFAULT_CLIP) -> PropensityScores:
    """Logistic regression of Z on encoded covariates, fitted by IRLS."""
    clip = _check_clip(clip)
    names = ds.covariate_names if features.covariates is None else tuple(features.covariates)
    X = ds.covariate_matrix(names)
    encoder = DesignEncoder(features.encoding, features.interactions, names).fit(X)
    D = encoder.transform(X)
    model = LogisticRegressionIRLS(feature_names=encoder.feature_names_).fit(D, ds.treatment)
    raw = model.predict_proba(D)[:, 1]
    scores, clipped = _clip_scores(raw, clip)
    index = build_strata(ds, names)
    diagnostics = {
        "n_iter": model.n_iter_,
        "converged": model.converged_,
        "separation": model.separated_,
        "coefficients": dict(zip(encoder.feature_names_, map(float, model.coef_))),
    }
    violations = tuple(s.key for s in index.strata if not s.supported)
    return PropensityScores(scores, "logistic", clip, names, _stratum_map(index, scores),
                            violations, clipped, diagnostics)


def propensity_external(scores, clip=DEFAULT_CLIP, index: StratumIndex | None = None) -> PropensityScores:
    """Wrap externally supplied scores; a stratum map is kept when ``index`` shows they are stratum-constant."""
    clip = _check_clip(clip)
    raw = np.asarray(scores, dtype=float)
    if raw.ndim != 1 or raw.size == 0 or not np.all(np.isfinite(raw)):
        raise EstimationError("external scores must be a non-empty vector of finite values")
    if np.any((raw < 0.0) | (raw > 1.0)):
        raise EstimationError("external scores must lie in [0, 1]")
    out, clipped = _clip_scores(raw, clip)
    stratum_scores = None
    covs: tuple[str, ...] = ()
    if index is not None:
        if index.n != raw.size:
            raise EstimationError("external scores do not cover every record")
        covs = index.covariates
        if all(np.all(out[s.rows] == out[s.rows[0]]) for s in index.strata):
            stratum_scores = _stratum_map(index, out)
    return PropensityScores(out, "external", clip, covs, stratum_scores, (), clipped)


@dataclass(frozen=True, eq=False)
class ScoreBins:
    """Partition of records into ``k`` bins of ascending propensity score."""

    k: int
    labels: np.ndarray
    n_treated: np.ndarray
    n_control: np.ndarray
    n: np.ndarray
    r: np.ndarray
    e: np.ndarray
    order: np.ndarray
    scores: PropensityScores
    strategy: str = "quantile"

    @property
    def n_total(self) -> int:
        return int(self.labels.shape[0])


def _frozen(a, dtype):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def bin_scores(scores: PropensityScores, treatment, k: int = DEFAULT_K, strategy: str = "quantile") -> ScoreBins:
    """Sort scores (ties by record index) and cut into ``k`` contiguous bins.

    ``quantile`` makes equal-count bins, the first ``N mod k`` one record
    larger.  ``distinct`` puts each distinct score value in its own bin and
    requires exactly ``k`` distinct values.  Bin labels run from 1 to ``k``.
    """
    z = np.asarray(treatment)
    s = scores.scores
    n = s.shape[0]
    if z.shape != (n,):
        raise EstimationError("treatment vector does not match scores")
    if k < 1:
        raise EstimationError("k must be at least 1")
    order = np.lexsort((np.arange(n), s))
    if strategy == "quantile":
        if n < k:
            raise EstimationError(f"cannot form {k} non-empty bins from {n} records")
        base, extra = divmod(n, k)
        sizes = [base + (1 if b < extra else 0) for b in range(k)]
        sorted_labels = np.repeat(np.arange(1, k + 1), sizes)
    elif strategy == "distinct":
        values, sorted_labels = np.unique(s[order], return_inverse=True)
        if values.size != k:
            raise EstimationError(f"distinct binning needs exactly {k} distinct scores, found {values.size}")
        sorted_labels = sorted_labels.reshape(-1) + 1
    else:
        raise EstimationError(f"unknown binning strategy {strategy!r}")
    labels = np.empty(n, dtype=np.int64)
    labels[order] = sorted_labels
    n1 = np.array([int(np.count_nonzero((labels == b) & (z == 1))) for b in range(1, k + 1)])
    n0 = np.array([int(np.count_nonzero((labels == b) & (z == 0))) for b in range(1, k + 1)])
    nb = n1 + n0
    r = nb / n
    e = n1 / nb
    return ScoreBins(k, _frozen(labels, np.int64), _frozen(n1, np.int64), _frozen(n0, np.int64),
                     _frozen(nb, np.int64), _frozen(r, float), _frozen(e, float), _frozen(order, np.int64),
                     scores, strategy)


def write_scores_csv(path, scores: PropensityScores, bins: ScoreBins | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("record_index,score,bin\n")
        for i, e in enumerate(scores.scores):
            label = "" if bins is None else str(int(bins.labels[i]))
            fh.write(f"{i},{float(e)!r},{label}\n")


def read_scores_csv(path, n: int | None = None, clip=DEFAULT_CLIP, index: StratumIndex | None = None) -> PropensityScores:
    """Load ``record_index,score[,bin]`` rows as external scores."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or "record_index" not in rows[0] or "score" not in rows[0]:
        raise DataError(f"{path}: expected columns record_index,score")
    values = {}
    for line, row in enumerate(rows, start=1):
        try:
            i, e = int(row["record_index"]), float(row["score"])
        except (TypeError, ValueError):
            raise DataError(f"{path}: row {line}: malformed record_index/score") from None
        if i in values:
            raise DataError(f"{path}: row {line}: duplicate record_index {i}")
        values[i] = e
    size = len(values) if n is None else n
    if sorted(values) != list(range(size)):
        raise DataError(f"{path}: record indices must cover 0..{size - 1} exactly")
    return propensity_external([values[i] for i in range(size)], clip, index)


class PropensityScoreEstimator(BaseEstimator):
    """Estimator wrapper: ``fit(X, z)`` then ``predict_proba(X)`` gives e(x).

    ``method`` is ``"sample-proportion"`` (stratum treated fractions) or
    ``"logistic"`` (IRLS fit on the chosen encoding).
    """

    def __init__(self, method="sample-proportion", encoding="onehot", interactions=False, clip=DEFAULT_CLIP):
        self.method = method
        self.encoding = encoding
        self.interactions = interactions
        self.clip = clip

    def fit(self, X, z):
        X = check_array(X, dtype=np.int64, ensure_min_features=0)
        ds = Dataset.from_arrays(X, z, np.zeros(X.shape[0], dtype=np.int64),
                                 [f"x{j}" for j in range(X.shape[1])])
        if self.method == "sample-proportion":
            self.scores_ = propensity_sample_proportion(build_strata(ds), self.clip)
        elif self.method == "logistic":
            self.scores_ = propensity_logistic(ds, FeatureSpec(None, self.encoding, self.interactions), self.clip)
        else:
            raise EstimationError(f"unknown propensity method {self.method!r}")
        self.stratum_scores_ = dict(self.scores_.stratum_scores)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "scores_")
        X = check_array(X, dtype=np.int64, ensure_min_features=0)
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            key = tuple(int(v) for v in row)
            if key not in self.stratum_scores_:
                raise EstimationError(f"covariate configuration {key} not seen during fit")
            out[i] = self.stratum_scores_[key]
        return np.column_stack([1.0 - out, out])

    def transform(self, X):
        return self.predict_proba(X)[:, 1]


def treated_fraction(z) -> float:
    z = np.asarray(z, dtype=float)
    return seqsum(z) / z.size
