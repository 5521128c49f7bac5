"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 estimation / support / model error, 4 I/O.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .data import Schema, build_strata, check_support, fit_mle, load_csv
from .estimators import (METHODS, EstimateConfig, estimate_all, format_table, naive_difference,
                         reports_to_json)
from .exceptions import CekError, DataError
from .model import InterventionQuery, interventional_distribution, load_model, save_model
from .outcome import read_predictions_csv
from .propensity import FeatureSpec, bin_scores, read_scores_csv, write_scores_csv
from .simulate import Scenario, builtin_scenarios, get_scenario, read_truth, sample, truth_path_for

EXIT_OK, EXIT_USAGE, EXIT_ESTIMATION, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _clip(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("clip bounds are given as LOW,HIGH")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid clip bounds {text!r}") from None
    if not 0.0 < lo <= hi < 1.0:
        raise argparse.ArgumentTypeError("clip bounds must satisfy 0 < LOW <= HIGH < 1")
    return lo, hi


def _assignment(text):
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NODE=STATE, got {text!r}")
    try:
        return name.strip(), int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"state in {text!r} must be an integer") from None


def _add_schema(p):
    p.add_argument("--data", required=True, help="observed CSV file")
    p.add_argument("--covariates", type=_csv_list, default=None,
                   help="comma-separated covariate columns (default: every column except treatment and outcome)")
    p.add_argument("--treatment-col", default="z")
    p.add_argument("--outcome-col", default="y")
    p.add_argument("--outcome-type", choices=("auto", "binary", "real"), default="auto")


def _add_estimation(p):
    p.add_argument("--propensity", choices=("sample-proportion", "logistic", "external"),
                   default="sample-proportion")
    p.add_argument("--propensity-features", default="onehot",
                   help="onehot, onehot+interactions or saturated")
    p.add_argument("--propensity-file", help="CSV with record_index,score for --propensity external")
    p.add_argument("--outcome", dest="outcome_model",
                   choices=("stratum-mean", "logistic", "external"), default="stratum-mean")
    p.add_argument("--outcome-features", default="onehot")
    p.add_argument("--outcome-file", help="CSV with record_index,yhat1,yhat0 for --outcome external")
    p.add_argument("--k", type=int, default=5, help="number of propensity bins")
    p.add_argument("--bin-strategy", choices=("quantile", "distinct"), default="quantile")
    p.add_argument("--support-policy", choices=("error", "drop-and-renormalize", "clip-propensity"),
                   default="error")
    p.add_argument("--clip", type=_clip, default=(1e-6, 1 - 1e-6))
    p.add_argument("--threshold", action="store_true", help="round outcome predictions to 0/1")
    p.add_argument("--format", choices=("table", "structured"), default="table")


def build_parser():
    parser = argparse.ArgumentParser(prog="cek", description="Causal effect estimators on discrete data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a dataset with potential outcomes")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=sorted(builtin_scenarios()))
    src.add_argument("--model", help="model JSON file with CPTs")
    p.add_argument("--treatment-node", default="z")
    p.add_argument("--outcome-node", default="y")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="truth sidecar path (default: OUT with .truth.csv)")

    p = sub.add_parser("fit", help="fit a model's CPTs by maximum likelihood")
    _add_schema(p)
    p.add_argument("--model", required=True, help="model JSON (graph; CPTs ignored)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="estimate the average treatment effect")
    _add_schema(p)
    p.add_argument("--method", choices=METHODS + ("all",), default="all")
    _add_estimation(p)
    p.add_argument("--export-scores", help="write record_index,score,bin CSV")

    p = sub.add_parser("intervene", help="interventional distribution of a node")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--scenario", choices=sorted(builtin_scenarios()))
    p.add_argument("--do", type=_assignment, action="append", default=[], required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--contrast", action="store_true", help="also print p(target | node=state)")
    p.add_argument("--format", choices=("table", "structured"), default="table")

    p = sub.add_parser("check-support", help="list strata lacking a treated or control record")
    _add_schema(p)
    p.add_argument("--format", choices=("table", "structured"), default="table")

    p = sub.add_parser("compare", help="compare estimators with the simulated truth")
    _add_schema(p)
    p.add_argument("--truth-file", help="truth sidecar (default: DATA with .truth.csv)")
    _add_estimation(p)
    return parser


def _schema(args):
    return Schema(args.treatment_col, args.outcome_col, args.covariates, args.outcome_type)


def _config(args, ds, covariates=None):
    index = build_strata(ds, covariates) if covariates is not None else build_strata(ds)
    scores = outcome = None
    if args.propensity == "external":
        if not args.propensity_file:
            raise UsageError("--propensity external requires --propensity-file")
        scores = read_scores_csv(args.propensity_file, ds.n, args.clip, index)
    if args.outcome_model == "external":
        if not args.outcome_file:
            raise UsageError("--outcome external requires --outcome-file")
        outcome = read_predictions_csv(args.outcome_file, ds.n)
    try:
        pfeat = FeatureSpec.parse(args.propensity_features)
        ofeat = FeatureSpec.parse(args.outcome_features)
    except CekError as exc:
        raise UsageError(str(exc)) from None
    return EstimateConfig(covariates=covariates, propensity=args.propensity, propensity_features=pfeat,
                          external_scores=scores, outcome=args.outcome_model, outcome_features=ofeat,
                          external_outcome=outcome, k=args.k, bin_strategy=args.bin_strategy,
                          support_policy=args.support_policy, clip=args.clip, threshold=args.threshold)


def run_simulate(args, out):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.scenario:
        scenario = get_scenario(args.scenario, args.n, args.seed)
    else:
        graph, cpts = load_model(args.model)
        if cpts is None:
            raise UsageError("--model for simulate must contain CPTs")
        scenario = Scenario(os.path.basename(args.model), graph, cpts, args.treatment_node, args.outcome_node,
                            args.n, args.seed)
    sim = sample(scenario)
    try:
        truth = sim.write(args.out, args.truth)
    except OSError as exc:
        raise DataError(f"cannot write output: {exc}") from exc
    print(f"true_ate={scenario.true_ate()!r}", file=out)
    print(f"wrote {args.out} and {truth}", file=out)


def run_fit(args, out):
    ds = load_csv(args.data, _schema(args))
    graph, _ = load_model(args.model)
    cpts = fit_mle(ds, graph)
    try:
        save_model(args.out, graph, cpts)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from exc
    for node, config in cpts.unidentified:
        print(f"unidentified row: {node} {list(config)} (filled uniformly)", file=out)
    print(f"wrote {args.out}", file=out)


def run_estimate(args, out):
    ds = load_csv(args.data, _schema(args))
    config = _config(args, ds, args.covariates)
    methods = METHODS if args.method == "all" else (args.method,)
    reports = estimate_all(ds, config, methods)
    if args.export_scores:
        from .estimators import fit_inputs
        fitted = fit_inputs(ds, config)
        bins = bin_scores(fitted.scores, fitted.dataset.treatment, config.k, config.bin_strategy)
        write_scores_csv(args.export_scores, fitted.scores, bins)
    if args.format == "structured":
        print(reports_to_json(reports), file=out)
    else:
        print(format_table(reports), file=out)


def run_intervene(args, out):
    if args.scenario:
        scenario = get_scenario(args.scenario)
        graph, cpts = scenario.graph, scenario.cpts
    else:
        graph, cpts = load_model(args.model)
        if cpts is None:
            raise UsageError("--model for intervene must contain CPTs")
    do = dict(args.do)
    dist = interventional_distribution(graph, cpts, InterventionQuery(args.target, do))
    cond = None
    if args.contrast:
        cond = interventional_distribution(graph, cpts, InterventionQuery(args.target, {}, do))
    if args.format == "structured":
        doc = {"target": args.target, "do": do, "interventional": [float(v) for v in dist]}
        if cond is not None:
            doc["conditional"] = [float(v) for v in cond]
        print(json.dumps(doc, indent=2, sort_keys=True), file=out)
        return
    given = ",".join(f"{k}={v}" for k, v in do.items())
    header = ["state", f"p({args.target}|do({given}))"]
    if cond is not None:
        header.append(f"p({args.target}|{given})")
    rows = [header]
    for s in range(len(dist)):
        row = [str(s), f"{dist[s]:.12f}"]
        if cond is not None:
            row.append(f"{cond[s]:.12f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=out)


def run_check_support(args, out):
    ds = load_csv(args.data, _schema(args))
    report = check_support(build_strata(ds, args.covariates))
    if args.format == "structured":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True), file=out)
        return
    if report.ok:
        print("common support holds in every stratum", file=out)
        return
    print(f"{len(report.violations)} stratum(s) violate common support, mass {report.mass:.12g}", file=out)
    for d in report.details:
        print(f"  {report.covariates}={tuple(d['stratum'])}: n={d['n']} treated={d['n_treated']} "
              f"control={d['n_control']}", file=out)


def run_compare(args, out):
    ds = load_csv(args.data, _schema(args))
    truth = read_truth(args.truth_file or truth_path_for(args.data))
    covariates = args.covariates
    if covariates is None and truth.adjustment is not None:
        covariates = list(truth.adjustment)
    config = _config(args, ds, covariates)
    reports = estimate_all(ds, config)
    rows = [("naive", naive_difference(ds))] + [(r.method, r.estimate) for r in reports]
    if args.format == "structured":
        doc = {"true_ate": truth.true_ate, "covariates": covariates,
               "rows": [{"method": m, "estimate": v, "error": v - truth.true_ate} for m, v in rows]}
        print(json.dumps(doc, indent=2, sort_keys=True), file=out)
        return
    table = [("method", "estimate", "error")] + [(m, f"{v:.6f}", f"{v - truth.true_ate:+.6f}") for m, v in rows]
    widths = [max(len(r[i]) for r in table) for i in range(3)]
    print(f"true_ate={truth.true_ate:.6f}", file=out)
    for r in table:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=out)


COMMANDS = {"simulate": run_simulate, "fit": run_fit, "estimate": run_estimate, "intervene": run_intervene,
            "check-support": run_check_support, "compare": run_compare}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"cek {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"cek {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CekError as exc:
        print(f"cek {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def entry_point():
    sys.exit(main())
