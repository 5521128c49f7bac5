"""Causal effect estimation on discrete observational data.

Adjustment (g-formula), inverse probability weighting, propensity
stratification, predicted-outcome plug-in and doubly robust estimators,
together with an exact discrete Bayesian-network engine for interventional
queries and a simulator that materializes both potential outcomes.
"""
from .data import Dataset, Schema, StratumIndex, SupportReport, build_strata, check_support, discretize, fit_mle, load_csv, write_csv
from .estimators import (AteEstimator, AteReport, EstimateConfig, ate_adjustment, ate_dr, ate_iptw,
                         ate_plugin_predicted, ate_stratified, correction_term, estimate_all, naive_difference)
from .exceptions import (CekError, DataError, EnumerationLimitError, EstimationError, ModelError,
                         RankDeficientError, SupportError)
from .logistic import LogisticRegressionIRLS
from .model import (CausalGraph, CptSet, InterventionQuery, Node, adjustment_formula, expectation,
                    interventional_distribution, joint_probability, load_model, model_from_dict, model_to_dict,
                    random_cpts, save_model, true_ate, validate)
from .outcome import OutcomeModel, fit_outcome_logistic, fit_stratum_means, predict_both_arms
from .propensity import (FeatureSpec, PropensityScoreEstimator, PropensityScores, ScoreBins, bin_scores,
                         propensity_logistic, propensity_sample_proportion)
from .simulate import Scenario, SimulatedDataset, builtin_scenarios, get_scenario, sample

__version__ = "0.1.0"
