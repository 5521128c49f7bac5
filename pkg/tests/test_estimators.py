import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import identities
import oracles
from conftest import D1_ATE, D1_RECORDS, dataset_from_records, random_records
from cek import (AteEstimator, AteReport, Dataset, EstimateConfig, SupportError, ate_adjustment, ate_dr, ate_iptw,
                 ate_plugin_predicted, ate_stratified, bin_scores, build_strata, correction_term, estimate_all,
                 fit_stratum_means, get_scenario, naive_difference, predict_both_arms, propensity_sample_proportion,
                 sample)
from cek.estimators import (correction_term_difference_form, dr_expanded, format_table, reports_from_json,
                            reports_to_json)
from cek.exceptions import EstimationError
from cek.propensity import propensity_external

TOL = 1e-12
D1_WRONG = [0.7] * 8


# --- the oracle reproduces the hand-derived D1 values first -----------------------

def test_oracle_reproduces_d1_hand_values():
    e = oracles.sample_proportion_scores(D1_RECORDS)
    y1, y0 = oracles.stratum_mean_predictions(D1_RECORDS)
    assert e == [0.5] * 8
    assert oracles.adjustment(D1_RECORDS) == D1_ATE
    assert oracles.iptw(D1_RECORDS, e) == D1_ATE
    assert oracles.stratified(D1_RECORDS, [1, 1, 1, 1, 2, 2, 2, 2]) == D1_ATE
    assert oracles.plugin_predicted(D1_RECORDS, e, y1, y0) == D1_ATE
    assert oracles.correction(D1_RECORDS, e, y1, y0) == 0.0
    assert abs(oracles.dr(D1_RECORDS, D1_WRONG, y1, y0) - D1_ATE) <= TOL
    # hand evaluation: (1+0+1+1)/(8*0.7) - (0+0+1+0)/(8*0.3) = 5/42
    assert abs(oracles.iptw(D1_RECORDS, D1_WRONG) - 5 / 42) <= TOL


# --- D1 examples ---------------------------------------------------------------------

@pytest.fixture
def d1_inputs(d1):
    index = build_strata(d1)
    return d1, index, propensity_sample_proportion(index), predict_both_arms(fit_stratum_means(d1, index), d1)


def test_d1_adjustment(d1_inputs):
    _, index, _, _ = d1_inputs
    assert abs(ate_adjustment(index).estimate - oracles.adjustment(D1_RECORDS)) <= TOL


def test_d1_iptw_sample_proportion(d1_inputs):
    ds, index, ps, _ = d1_inputs
    assert abs(ate_iptw(ds, ps).estimate - ate_adjustment(index).estimate) <= TOL


def test_d1_iptw_wrong_scores(d1):
    value = ate_iptw(d1, propensity_external(D1_WRONG)).estimate
    assert abs(value - oracles.iptw(D1_RECORDS, D1_WRONG)) <= TOL
    assert abs(value - D1_ATE) > 0.01


def test_d1_stratified_k2(d1_inputs):
    ds, _, ps, _ = d1_inputs
    bins = bin_scores(ps, ds.treatment, 2)
    assert abs(ate_stratified(ds, bins).estimate - oracles.stratified(D1_RECORDS, bins.labels.tolist())) <= TOL


def test_d1_plugin(d1_inputs):
    ds, _, ps, preds = d1_inputs
    e = oracles.sample_proportion_scores(D1_RECORDS)
    y1, y0 = oracles.stratum_mean_predictions(D1_RECORDS)
    assert abs(ate_plugin_predicted(ds, ps, preds).estimate - oracles.plugin_predicted(D1_RECORDS, e, y1, y0)) <= TOL


def test_d1_correction_wrong_scores_two_forms(d1_inputs):
    ds, _, _, preds = d1_inputs
    ps = propensity_external(D1_WRONG)
    corr = correction_term(ds, ps, preds)
    assert abs(corr) > 0.01
    assert abs(corr - correction_term_difference_form(ds, ps, preds)) <= TOL
    y1, y0 = oracles.stratum_mean_predictions(D1_RECORDS)
    assert abs(corr - oracles.correction(D1_RECORDS, D1_WRONG, y1, y0)) <= TOL


def test_d1_dr_any_predictions_with_sample_proportions(d1_inputs):
    ds, _, ps, _ = d1_inputs
    rng = np.random.default_rng(0)
    for _ in range(5):
        preds = identities.stratum_constant_predictions(D1_RECORDS, rng)
        assert abs(ate_dr(ds, ps, preds).estimate - ate_iptw(ds, ps).estimate) <= TOL


def test_d1_dr_wrong_scores_stratum_means(d1_inputs):
    ds, index, _, preds = d1_inputs
    report = ate_dr(ds, propensity_external(D1_WRONG, index=index), preds, "stratum-mean")
    assert abs(report.estimate - ate_adjustment(index).estimate) <= TOL
    assert report.diagnostics["robustness"] == ["outcome=stratum-mean"]
    assert report.diagnostics["two_form_abs_diff"] <= TOL


def test_d1_estimate_all_k2(d1):
    reports = estimate_all(d1, EstimateConfig(k=2))
    assert [r.method for r in reports] == ["adjustment", "iptw", "stratified", "plugin-predicted", "dr"]
    for r in reports:
        assert abs(r.estimate - D1_ATE) <= TOL
        for chk in r.diagnostics.get("identity_checks", []):
            assert chk["holds"] is not False


def test_d1_default_k_names_single_arm_bin(d1):
    # N=8 into 5 equal-count bins leaves size-1 bins, which have one arm
    with pytest.raises(EstimationError, match="bin 1 has a single treatment arm"):
        estimate_all(d1, EstimateConfig())
    others = estimate_all(d1, EstimateConfig(), methods=("adjustment", "iptw", "plugin-predicted", "dr"))
    assert all(abs(r.estimate - D1_ATE) <= TOL for r in others)


# --- simple cases ----------------------------------------------------------------------

def test_constant_outcome_gives_zero(d1):
    ds = d1.with_outcome(np.ones(8, int))
    index = build_strata(ds)
    assert ate_adjustment(index).estimate == 0.0
    preds = predict_both_arms(fit_stratum_means(ds, index), ds)
    for scores in ([0.3] * 8, np.linspace(0.1, 0.9, 8)):
        ps = propensity_external(scores)
        assert abs(ate_dr(ds, ps, preds).estimate) <= TOL


def test_randomized_y_equals_z():
    z = np.array([1, 0] * 10)
    ds = Dataset({}, z, z.copy())
    assert ate_iptw(ds, propensity_external([0.5] * 20)).estimate == 1.0


def test_plugin_with_observed_outcomes_equals_iptw(d1):
    ps = propensity_external(np.linspace(0.2, 0.8, 8))
    y = d1.outcome.astype(float)
    assert ate_plugin_predicted(d1, ps, (y, y)).estimate == ate_iptw(d1, ps).estimate


def test_plugin_constant_predictions_zero(d1):
    ps = propensity_sample_proportion(build_strata(d1))
    c = np.full(8, 0.37)
    assert abs(ate_plugin_predicted(d1, ps, (c, c)).estimate) <= TOL


def test_division_guard(d1):
    from cek.propensity import PropensityScores
    unguarded = PropensityScores(np.array([1.0] + [0.5] * 7), "external")
    with pytest.raises(EstimationError, match="division guard"):
        ate_iptw(d1, unguarded)
    with pytest.raises(EstimationError, match="division guard"):
        ate_dr(d1, unguarded, (np.zeros(8), np.zeros(8)))


def test_stratified_k1_is_naive_exactly():
    rng = np.random.default_rng(3)
    for _ in range(20):
        records = random_records(rng)
        ds = dataset_from_records(records)
        ps = propensity_sample_proportion(build_strata(ds))
        assert ate_stratified(ds, bin_scores(ps, ds.treatment, 1)).estimate == naive_difference(ds)
        assert abs(naive_difference(ds) - oracles.naive(records)) <= TOL


def test_stratified_constant_propensity_equal_bin_fractions():
    # treatment alternates, so every equal-count bin of a constant score has treated fraction 0.5
    rng = np.random.default_rng(4)
    for k in (1, 2, 4, 5):
        n = 2 * k * 6
        z = np.array([1, 0] * (n // 2))
        ds = Dataset({}, z, rng.integers(0, 2, n))
        ps = propensity_external([0.5] * n)
        strat = ate_stratified(ds, bin_scores(ps, z, k)).estimate
        assert abs(strat - ate_iptw(ds, ps).estimate) <= TOL


def test_stratified_single_arm_bin_error():
    ds = Dataset({}, np.array([1, 1, 0, 0]), np.array([1, 0, 0, 1]))
    with pytest.raises(EstimationError, match="bin 1"):
        ate_stratified(ds, bin_scores(propensity_external([0.5] * 4), ds.treatment, 2))


def test_stratified_mixed_case_reports_discrepancy():
    sim = sample(get_scenario("triangle", n=2000, seed=3))
    ds = sim.dataset
    ps = propensity_sample_proportion(build_strata(ds))
    report = ate_stratified(ds, bin_scores(ps, ds.treatment, 5))
    expected = report.estimate - ate_iptw(ds, ps).estimate
    assert report.diagnostics["stratified_minus_iptw"] == pytest.approx(expected, abs=TOL)
    assert abs(report.estimate - oracles.stratified(
        [((int(x),), int(z), int(y)) for x, z, y in zip(ds.covariates["x"], ds.treatment, ds.outcome)],
        bin_scores(ps, ds.treatment, 5).labels.tolist())) <= TOL


# --- exact identities over random datasets ------------------------------------------

SEEDS = st.integers(0, 2**32 - 1)


@settings(max_examples=200, deadline=None)
@given(SEEDS)
def test_i1_iptw_equals_adjustment(seed):
    assert identities.worst(identities.i1(random_records(np.random.default_rng(seed)))) <= TOL


@settings(max_examples=200, deadline=None)
@given(SEEDS)
def test_i2_aligned_bins(seed):
    rng = np.random.default_rng(seed)
    assert identities.worst(identities.i2(random_records(rng), rng)) <= TOL


@settings(max_examples=200, deadline=None)
@given(SEEDS)
def test_i3_correction_vanishes(seed):
    rng = np.random.default_rng(seed)
    assert identities.worst(identities.i3(random_records(rng), rng)) <= TOL


@settings(max_examples=200, deadline=None)
@given(SEEDS)
def test_i4_dr_equals_adjustment(seed):
    rng = np.random.default_rng(seed)
    assert identities.worst(identities.i4(random_records(rng), rng)) <= TOL


@settings(max_examples=200, deadline=None)
@given(SEEDS)
def test_i5_dr_two_forms(seed):
    rng = np.random.default_rng(seed)
    assert identities.worst(identities.i5(random_records(rng), rng)) <= TOL


@settings(max_examples=200, deadline=None)
@given(SEEDS)
def test_i6_real_outcome(seed):
    rng = np.random.default_rng(seed)
    assert identities.worst(identities.i6(random_records(rng, real=True), rng)) <= TOL


@settings(max_examples=100, deadline=None)
@given(SEEDS)
def test_i7_model_bridge(seed):
    assert identities.worst(identities.i7(random_records(np.random.default_rng(seed)))) <= TOL


def test_i4_needs_stratum_constant_scores():
    # per-record scores varying inside a stratum break the identity, which is why it is scoped
    rng = np.random.default_rng(8)
    records = random_records(rng, n_range=(100, 200))
    ds = dataset_from_records(records)
    index = build_strata(ds)
    preds = predict_both_arms(fit_stratum_means(ds, index), ds)
    dr = ate_dr(ds, propensity_external(rng.uniform(0.05, 0.95, ds.n)), preds).estimate
    assert abs(dr - ate_adjustment(index).estimate) > 1e-6


# --- support policies -----------------------------------------------------------------

def _violating():
    recs = list(D1_RECORDS)
    recs[6] = ((1,), 1, 1)
    recs[7] = ((1,), 1, 0)
    return recs


def test_support_error_lists_strata():
    ds = dataset_from_records(_violating())
    with pytest.raises(SupportError, match=r"\[\[1\]\]") as info:
        ate_adjustment(build_strata(ds))
    assert info.value.strata == [(1,)]
    with pytest.raises(SupportError):
        estimate_all(ds, EstimateConfig(k=2))


def test_drop_and_renormalize():
    ds = dataset_from_records(_violating() + [((2,), 1, 1), ((2,), 0, 0)])
    report = ate_adjustment(build_strata(ds), "drop-and-renormalize")
    kept = [r for r in _violating() if r[0] == (0,)] + [((2,), 1, 1), ((2,), 0, 0)]
    assert abs(report.estimate - oracles.adjustment(kept)) <= TOL
    assert report.diagnostics["dropped_mass"] == pytest.approx(0.4)
    reports = estimate_all(ds, EstimateConfig(k=2, support_policy="drop-and-renormalize"),
                           ("adjustment", "iptw", "dr"))
    assert reports[0].diagnostics["dropped_records"] == 4
    assert all(abs(r.estimate - oracles.adjustment(kept)) <= TOL for r in reports)


def test_clip_propensity_keeps_iptw_identity():
    ds = dataset_from_records(_violating())
    index = build_strata(ds)
    clip = (0.01, 0.99)
    adj = ate_adjustment(index, "clip-propensity", clip)
    ps = propensity_sample_proportion(index, clip)
    assert adj.diagnostics["clipped_strata"] == [[1]]
    assert abs(adj.estimate - ate_iptw(ds, ps).estimate) <= TOL
    assert ps.clipped == (4, 5, 6, 7)


def test_unknown_policy(d1):
    with pytest.raises(EstimationError):
        ate_adjustment(build_strata(d1), "ignore")


# --- orchestration and reporting --------------------------------------------------------

def test_randomized_adjustment_close_to_naive():
    ds = sample(get_scenario("randomized", n=20_000, seed=2)).dataset
    reports = {r.method: r.estimate for r in estimate_all(ds, EstimateConfig())}
    assert abs(reports["adjustment"] - naive_difference(ds)) < 0.01


def test_logistic_non_saturated_marks_not_applicable():
    ds = sample(get_scenario("mediator", n=3000, seed=4)).dataset
    config = EstimateConfig(covariates=("x1", "x2", "x3", "x4"), propensity="logistic")
    reports = {r.method: r for r in estimate_all(ds, config)}
    iptw_check = reports["iptw"].diagnostics["identity_checks"][0]
    assert iptw_check["applicable"] is False and iptw_check["holds"] is None
    dr_checks = {c["name"]: c for c in reports["dr"].diagnostics["identity_checks"]}
    assert dr_checks["correction_vanishes"]["applicable"] is False
    assert dr_checks["dr_two_forms"]["holds"] is True


def test_estimate_all_deterministic_and_round_trips(d1):
    a = reports_to_json(estimate_all(d1, EstimateConfig(k=2)))
    b = reports_to_json(estimate_all(d1, EstimateConfig(k=2)))
    assert a == b
    back = reports_from_json(a)
    assert reports_to_json(back) == a
    assert json.loads(a)["reports"][0]["method"] == "adjustment"


def test_report_rejects_bad_values():
    with pytest.raises(EstimationError):
        AteReport("adjustment", float("nan"))
    with pytest.raises(EstimationError):
        AteReport("magic", 0.1)
    with pytest.raises(EstimationError):
        AteReport.from_dict({"method": "dr", "estimate": 0.1, "extra": 1})


def test_format_table(d1):
    text = format_table(estimate_all(d1, EstimateConfig(k=2)))
    lines = text.splitlines()
    assert lines[0].split()[:2] == ["method", "estimate"]
    assert len(lines) == 7
    assert "0.500000000000" in lines[2]
    assert "iptw_equals_adjustment:ok" in text


def test_ate_estimator_api(d1):
    X = d1.covariate_matrix()
    est = AteEstimator(method="dr", k=2).fit(X, d1.treatment, d1.outcome)
    assert abs(est.ate_ - D1_ATE) <= TOL
    assert set(est.reports_) == {"adjustment", "iptw", "stratified", "plugin-predicted", "dr"}
    assert est.get_params()["k"] == 2
    with pytest.raises(EstimationError):
        AteEstimator(method="nope").fit(X, d1.treatment, d1.outcome)
