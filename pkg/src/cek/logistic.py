"""Logistic regression by iteratively reweighted least squares.

Also hosts :class:`DesignEncoder`, which turns categorical codes into the
design matrices used by the propensity and outcome fits.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import EstimationError, RankDeficientError

TOL = 1e-10
MAX_ITER = 100
SEPARATION_BOUND = 30.0
RANK_TOL = 1e-9


def log_likelihood(X, y, beta) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def gradient(X, y, beta) -> np.ndarray:
    """Score vector ``X^T (y - p)`` of the Bernoulli log-likelihood."""
    return X.T @ (y - expit(X @ beta))


def check_rank(X, names=None, tol: float = RANK_TOL) -> None:
    """Raise :class:`RankDeficientError` naming the columns a pivoted QR drops."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 0:
        raise RankDeficientError("design has no columns")
    names = list(names) if names is not None else [f"col{j}" for j in range(X.shape[1])]
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        raise RankDeficientError(f"design is all zeros; collinear columns: {names}", names)
    rank = int(np.count_nonzero(diag > tol * diag[0]))
    if rank < X.shape[1]:
        dropped = [names[j] for j in piv[rank:]]
        raise RankDeficientError(f"rank-deficient design (rank {rank} < {X.shape[1]}); "
                                 f"collinear columns: {dropped}", dropped)


@dataclass
class IrlsResult:
    coef: np.ndarray
    n_iter: int
    converged: bool
    separated: bool
    loglik_path: list = field(default_factory=list)
    grad_norm: float = np.nan


def irls(X, y, tol: float = TOL, max_iter: int = MAX_ITER) -> IrlsResult:
    """Newton/IRLS from zero coefficients.

    Stops when the largest coefficient change drops below ``tol``.  A step
    that would lower the log-likelihood is halved (up to 50 times), which
    keeps the likelihood path non-decreasing.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1])
    ll = log_likelihood(X, y, beta)
    path = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = expit(eta)
        w = expit(eta) * expit(-eta)
        grad = X.T @ (y - p)
        hess = X.T @ (X * w[:, None])
        try:
            with warnings.catch_warnings():
                # near-separated fits have a nearly singular Hessian; separation is flagged below
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                step = scipy.linalg.solve(hess, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        new_beta, new_ll = beta + step, log_likelihood(X, y, beta + step)
        halvings = 0
        while new_ll < ll and halvings < 50:
            step = step / 2.0
            new_beta, new_ll = beta + step, log_likelihood(X, y, beta + step)
            halvings += 1
        if new_ll < ll:
            break
        change = float(np.max(np.abs(new_beta - beta)))
        beta, ll = new_beta, new_ll
        path.append(ll)
        if change < tol:
            converged = True
            break
    separated = bool(np.any(np.abs(beta) > SEPARATION_BOUND))
    return IrlsResult(beta, it, converged, separated, path, float(np.linalg.norm(gradient(X, y, beta))))


class LogisticRegressionIRLS(ClassifierMixin, BaseEstimator):
    """Unpenalized logistic regression without an implicit intercept.

    Put an intercept column into ``X`` if one is wanted; the fit checks the
    design for rank deficiency before iterating.
    """

    def __init__(self, tol=TOL, max_iter=MAX_ITER, feature_names=None):
        self.tol = tol
        self.max_iter = max_iter
        self.feature_names = feature_names

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if not np.all(np.isin(y, (0, 1))):
            raise EstimationError("logistic response must be 0/1")
        check_rank(X, self.feature_names)
        result = irls(X, y, self.tol, self.max_iter)
        self.coef_ = result.coef
        self.n_iter_ = result.n_iter
        self.converged_ = result.converged
        self.separated_ = result.separated
        self.loglik_path_ = result.loglik_path
        self.grad_norm_ = result.grad_norm
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


ENCODINGS = ("onehot", "saturated")


class DesignEncoder(TransformerMixin, BaseEstimator):
    """Design matrix from integer codes.

    ``onehot``: intercept plus one indicator per non-reference level
    (reference = smallest observed code) of each column, optionally with all
    pairwise products of indicators from different columns.
    ``saturated``: one indicator per observed row configuration, no intercept.
    Columns are the covariates, plus the treatment first when the encoder is
    used for an outcome model.
    """

    def __init__(self, encoding="onehot", interactions=False, column_names=None):
        self.encoding = encoding
        self.interactions = interactions
        self.column_names = column_names

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.int64)
        if X.ndim != 2:
            raise EstimationError("design input must be two-dimensional")
        if self.encoding not in ENCODINGS:
            raise EstimationError(f"unknown encoding {self.encoding!r}; expected one of {ENCODINGS}")
        names = list(self.column_names) if self.column_names is not None else [f"c{j}" for j in range(X.shape[1])]
        self.names_in_ = names
        if self.encoding == "saturated":
            cells = np.unique(X, axis=0) if X.shape[1] else np.zeros((1, 0), dtype=np.int64)
            self.cells_ = [tuple(int(v) for v in c) for c in cells]
            self.feature_names_ = ["[" + ",".join(f"{n}={v}" for n, v in zip(names, c)) + "]" for c in self.cells_]
        else:
            self.levels_ = [sorted(int(v) for v in np.unique(X[:, j])) for j in range(X.shape[1])]
            feats = ["intercept"]
            self.dummies_ = []
            for j, levels in enumerate(self.levels_):
                for v in levels[1:]:
                    self.dummies_.append((j, v))
                    feats.append(f"{names[j]}={v}")
            self.pairs_ = []
            if self.interactions:
                for a, b in itertools.combinations(range(len(self.dummies_)), 2):
                    if self.dummies_[a][0] != self.dummies_[b][0]:
                        self.pairs_.append((a, b))
                        feats.append(f"{feats[a + 1]}*{feats[b + 1]}")
            self.feature_names_ = feats
        return self

    def transform(self, X):
        check_is_fitted(self, "feature_names_")
        X = np.asarray(X, dtype=np.int64)
        n = X.shape[0]
        if self.encoding == "saturated":
            lookup = {c: k for k, c in enumerate(self.cells_)}
            if X.shape[1]:
                keys, inverse = np.unique(X, axis=0, return_inverse=True)
                keys = [tuple(int(v) for v in k) for k in keys]
                inverse = inverse.reshape(-1)
            else:
                keys, inverse = [()], np.zeros(n, dtype=np.int64)
            missing = [k for k in keys if k not in lookup]
            if missing:
                raise EstimationError(f"configuration {missing[0]} not seen when the saturated design was fit")
            D = np.zeros((n, len(self.cells_)))
            D[np.arange(n), np.array([lookup[k] for k in keys], dtype=np.int64)[inverse]] = 1.0
            return D
        dummies = [(X[:, j] == v).astype(float) for j, v in self.dummies_]
        cols = [np.ones(n)] + dummies + [dummies[a] * dummies[b] for a, b in self.pairs_]
        return np.column_stack(cols)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_")
        return np.array(self.feature_names_, dtype=object)
