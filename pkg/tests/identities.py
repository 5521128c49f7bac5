"""Exact estimator identities, each returning a dict of absolute deviations.

Shared by the property tests and the acceptance runner so that both
exercise the same checks.
"""
import numpy as np

import oracles
from conftest import dataset_from_records
from cek import (CausalGraph, ate_adjustment, ate_dr, ate_iptw, ate_stratified, bin_scores, build_strata,
                 correction_term, fit_mle, fit_stratum_means, predict_both_arms, propensity_sample_proportion,
                 true_ate)
from cek.estimators import correction_term_difference_form, dr_expanded
from cek.propensity import propensity_external

TOL = 1e-12


def _setup(records):
    ds = dataset_from_records(records)
    index = build_strata(ds)
    return ds, index


def stratum_constant_scores(records, rng, low=0.05, high=0.95):
    keys = sorted(set(x for x, _, _ in records))
    per = {k: float(rng.uniform(low, high)) for k in keys}
    return [per[x] for x, _, _ in records]


def stratum_constant_predictions(records, rng):
    keys = sorted(set(x for x, _, _ in records))
    p1 = {k: float(rng.normal()) for k in keys}
    p0 = {k: float(rng.normal()) for k in keys}
    return np.array([p1[x] for x, _, _ in records]), np.array([p0[x] for x, _, _ in records])


def i1(records):
    """IPTW with sample-proportion scores equals adjustment."""
    ds, index = _setup(records)
    adj = ate_adjustment(index).estimate
    iptw = ate_iptw(ds, propensity_sample_proportion(index)).estimate
    return {"iptw-adjustment": abs(iptw - adj), "adjustment-oracle": abs(adj - oracles.adjustment(records)),
            "iptw-oracle": abs(iptw - oracles.iptw(records, oracles.sample_proportion_scores(records)))}


def aligned_scores(records, rng):
    """Scores equal to the treated fraction of a random grouping of strata.

    Returns the per-record scores and the number of distinct values.
    """
    keys = sorted(set(x for x, _, _ in records))
    k = int(rng.integers(1, min(4, len(keys)) + 1))
    group = {key: int(g) for key, g in zip(keys, rng.permutation(np.arange(len(keys)) % k))}
    n1 = [0] * k
    n = [0] * k
    for x, z, _ in records:
        n[group[x]] += 1
        n1[group[x]] += z
    scores = [n1[group[x]] / n[group[x]] for x, _, _ in records]
    return scores, len(set(scores))


def i2(records, rng):
    """Stratified equals IPTW when bins align with K distinct scores equal to the bin fractions."""
    ds, _ = _setup(records)
    scores, k = aligned_scores(records, rng)
    ps = propensity_external(scores)
    bins = bin_scores(ps, ds.treatment, k, "distinct")
    strat = ate_stratified(ds, bins).estimate
    iptw = ate_iptw(ds, ps).estimate
    labels = bins.labels.tolist()
    return {"stratified-iptw": abs(strat - iptw), "stratified-oracle": abs(strat - oracles.stratified(records, labels)),
            "bin-score-alignment": float(np.max(np.abs(np.asarray(scores) - bins.e[bins.labels - 1])))}


def i3(records, rng):
    """Correction term vanishes under sample-proportion scores, so DR equals IPTW."""
    ds, index = _setup(records)
    ps = propensity_sample_proportion(index)
    out = {}
    for name, preds in (("stratum-mean", predict_both_arms(fit_stratum_means(ds, index), ds)),
                        ("random", stratum_constant_predictions(records, rng))):
        corr = correction_term(ds, ps, preds)
        dr = ate_dr(ds, ps, preds).estimate
        iptw = ate_iptw(ds, ps).estimate
        out[f"correction[{name}]"] = abs(corr)
        out[f"correction-difference-form[{name}]"] = abs(correction_term_difference_form(ds, ps, preds))
        out[f"dr-iptw[{name}]"] = abs(dr - iptw)
    return out


def i4(records, rng):
    """DR with stratum-mean predictions equals adjustment for any stratum-constant scores."""
    ds, index = _setup(records)
    scores = stratum_constant_scores(records, rng)
    ps = propensity_external(scores, index=index)
    preds = predict_both_arms(fit_stratum_means(ds, index), ds)
    dr = ate_dr(ds, ps, preds).estimate
    adj = ate_adjustment(index).estimate
    y1, y0 = oracles.stratum_mean_predictions(records)
    counts = oracles.strata_counts(records)
    first = {}
    for i, (x, _, _) in enumerate(records):
        first.setdefault(x, i)
    standardized = sum(c[0] / len(records) * (y1[first[x]] - y0[first[x]]) for x, c in counts.items())
    return {"dr-adjustment": abs(dr - adj), "dr-standardized": abs(dr - standardized),
            "dr-oracle": abs(dr - oracles.dr(records, scores, y1, y0))}


def i5(records, rng):
    """The two DR forms agree for arbitrary per-record scores and predictions."""
    ds, _ = _setup(records)
    scores = rng.uniform(0.05, 0.95, size=len(records))
    preds = (rng.normal(size=len(records)), rng.normal(size=len(records)))
    ps = propensity_external(scores)
    dr = ate_dr(ds, ps, preds).estimate
    return {"dr-two-forms": abs(dr - dr_expanded(ds, ps, preds)),
            "dr-oracle": abs(dr - oracles.dr(records, scores.tolist(), preds[0].tolist(), preds[1].tolist())),
            "correction-two-forms": abs(correction_term(ds, ps, preds) - correction_term_difference_form(ds, ps, preds))}


def i6(records, rng):
    """I1, I3 and I4 on a real-valued outcome."""
    assert any(isinstance(y, float) and y not in (0.0, 1.0) for _, _, y in records)
    out = {}
    for name, fn in (("I1", lambda r: i1(r)), ("I3", lambda r: i3(r, rng)), ("I4", lambda r: i4(r, rng))):
        for key, value in fn(records).items():
            out[f"{name}:{key}"] = value
    return out


def i7(records):
    """Adjustment on data equals the true ATE of the MLE-fitted model.

    Every covariate has all earlier covariates as parents and all of them
    point into Z and Y, so the fitted joint reproduces the empirical
    distribution exactly.
    """
    ds, index = _setup(records)
    covs = list(ds.covariate_names)
    nodes = [(c, max(int(ds.covariates[c].max()) + 1, 2)) for c in covs] + [("z", 2), ("y", 2)]
    edges = [(a, b) for i, a in enumerate(covs) for b in covs[i + 1:]]
    edges += [(c, "z") for c in covs] + [(c, "y") for c in covs]
    edges.append(("z", "y"))
    graph = CausalGraph(nodes, edges)
    cpts = fit_mle(ds, graph)
    return {"adjustment-true_ate": abs(ate_adjustment(index).estimate - true_ate(graph, cpts, "z", "y"))}


def worst(deviations):
    return max(deviations.values())
