"""Command-line interface.

Subcommands:

* ``audit``            detection test on a scored dataset -> JSON report
* ``correct``          fit the optimal derived rule for a scored dataset
* ``train``            two-step training with a JSON hypothesis class
* ``fit-linear-fair``  correlation-constrained linear regression
* ``simulate``         draw a dataset from a built-in synthetic law
* ``reproduce``        run a named reproduction experiment

Every command emits JSON (stdout or ``--out``, written atomically). Exit
status: 0 on success with all claims passing, 1 when a reproduction claim
fails, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import Optional

import numpy as np

from .audit import detect
from .core import (
    AttributeRule,
    CellProbabilities,
    ConstantRule,
    Dataset,
    EqoddsError,
    FeatureThresholdRule,
    FiniteHypothesisClass,
    empirical_loss,
)
from .data_io import load_csv, write_csv, write_json_atomic
from .experiments import EXPERIMENTS, run_experiment
from .posthoc import RateStatistics, derived_loss, induced_rates, optimal_derived
from .second_moment import (
    derived_correction,
    estimate_moments,
    fit_closed_form,
    fit_constrained_convex,
    fit_unconstrained,
    model_squared_loss,
)
from .synthetic import erm_trap_family, gaussian_law, sample_law, two_proxy_law
from .two_step import TwoStepConfig, threshold_class, train_two_step


class CliError(Exception):
    """Configuration problem; maps to exit status 2."""


def _emit(payload: dict, out: Optional[str]) -> None:
    if out:
        write_json_atomic(payload, out)
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _score_predictions(dataset: Dataset, threshold: Optional[float]) -> np.ndarray:
    if dataset.scores is None:
        raise CliError("dataset has no score column; audit/correct need one")
    if threshold is not None:
        return (dataset.scores >= threshold).astype(float)
    scores = dataset.scores
    if ((scores < 0) | (scores > 1)).any():
        raise CliError("scores outside [0, 1]; pass --threshold to binarize them")
    return scores


def _parse_cell_probs(text: Optional[str]) -> Optional[CellProbabilities]:
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 4:
        raise CliError("--cell-probs wants four comma-separated values "
                       "(p00,p01,p10,p11 in (y,a) order)")
    return CellProbabilities.from_flat([float(p) for p in parts])


def _tolerance_arg(text: str):
    if text == "auto":
        return "auto"
    return float(text)


def build_hypothesis_class(spec: dict, dataset: Dataset) -> FiniteHypothesisClass:
    """Assemble a rule list from its JSON description.

    Entries: {"type": "threshold", "feature": j, "cut": t},
    {"type": "attribute"}, {"type": "constant", "value": 0 or 1}, and
    {"type": "threshold-grid", "feature": j, "max_cuts": k} which expands
    to data-derived cut points.
    """
    entries = spec.get("rules")
    if not entries:
        raise CliError("hypothesis spec needs a nonempty 'rules' list")
    rules = []
    for k, entry in enumerate(entries):
        kind = entry.get("type")
        if kind == "threshold":
            rules.append(FeatureThresholdRule(int(entry["feature"]),
                                              float(entry["cut"]),
                                              name=entry.get("name")))
        elif kind == "attribute":
            rules.append(AttributeRule(name=entry.get("name", "attr")))
        elif kind == "constant":
            rules.append(ConstantRule(float(entry["value"]), name=entry.get("name")))
        elif kind == "threshold-grid":
            grid = threshold_class(dataset, features=[int(entry["feature"])],
                                   max_cuts_per_feature=int(entry.get("max_cuts", 32)),
                                   include_constants=False)
            rules.extend(grid.rules)
        else:
            raise CliError(f"rules[{k}]: unknown type {kind!r}")
    return FiniteHypothesisClass(tuple(rules))


# ---- subcommand handlers --------------------------------------------------

def _cmd_audit(args) -> int:
    ds = load_csv(args.data, score_col=args.score_col)
    preds = _score_predictions(ds, args.threshold)
    report = detect(ds, preds, alpha=args.alpha, delta=args.delta,
                    cells=_parse_cell_probs(args.cell_probs))
    _emit(report.to_dict(), args.out)
    return 0


def _cmd_correct(args) -> int:
    ds = load_csv(args.data, score_col=args.score_col)
    preds = _score_predictions(ds, args.threshold)
    stats = RateStatistics.from_sample(ds, preds)
    derived = optimal_derived(stats, args.tolerance)
    out_rates = induced_rates(derived, stats)
    payload = {
        "tolerance": args.tolerance,
        "accept": derived.accept.tolist(),
        "base_rates": stats.rates.tolist(),
        "induced_rates": out_rates.rates.tolist(),
        "base_gap": float(np.abs(stats.rates[:, 0] - stats.rates[:, 1]).max()),
        "induced_gap": out_rates.gap(),
        "loss_before": empirical_loss(ds, preds),
        "loss_after": derived_loss(derived, stats),
    }
    _emit(payload, args.out)
    return 0


def _cmd_train(args) -> int:
    ds = load_csv(args.data)
    with open(args.hypotheses, encoding="utf-8") as fh:
        spec = json.load(fh)
    hclass = build_hypothesis_class(spec, ds)
    config = TwoStepConfig(delta=args.delta, train_tolerance=args.train_tolerance,
                           correct_tolerance=args.correct_tolerance, seed=args.seed)
    result = train_two_step(ds, hclass, config)
    payload = result.to_dict()
    payload["seed"] = args.seed
    _emit(payload, args.out)
    return 0


def _cmd_fit_linear_fair(args) -> int:
    if args.method in ("closed-form", "derived") and args.loss != "squared":
        raise CliError(f"method {args.method!r} is squared-loss only; "
                       f"use --method pgd for {args.loss!r}")
    ds = load_csv(args.data, attr_col=args.protected_col, label_col=args.label_col,
                  require_binary=False)
    model = estimate_moments(ds)
    raw = fit_unconstrained(model)
    payload = {
        "method": args.method,
        "loss": args.loss,
        "unconstrained": {"weights": raw.weights.tolist(),
                          "intercept": raw.intercept,
                          "squared_loss": model_squared_loss(model, raw)},
    }
    if args.method == "closed-form":
        sol = fit_closed_form(model)
        fitted, extra = sol.predictor, {"multiplier": sol.multiplier,
                                        "residual": sol.residual}
    elif args.method == "derived":
        corr = derived_correction(model)
        fitted = corr.predictor
        extra = {"multiplier": corr.multiplier,
                 "score_weight": corr.score_weight,
                 "attr_weight": corr.attr_weight}
    else:  # pgd
        fit = fit_constrained_convex(ds, loss=args.loss, model=model)
        fitted = fit.predictor
        extra = {"converged": fit.converged, "iterations": fit.iterations,
                 "objective": fit.objective,
                 "projected_gradient_norm": fit.projected_gradient_norm,
                 "residual": fit.constraint_residual}
    payload["constrained"] = {"weights": fitted.weights.tolist(),
                              "intercept": fitted.intercept,
                              "squared_loss": model_squared_loss(model, fitted),
                              **extra}
    _emit(payload, args.out)
    return 0


def _cmd_simulate(args) -> int:
    if args.law == "two-proxy":
        law = two_proxy_law(args.noise)
    elif args.law == "erm-trap":
        law, _ = erm_trap_family(args.features, args.alpha)
    else:
        law = gaussian_law(args.dim, seed=args.seed)
    ds = sample_law(law, args.n, seed=args.seed)
    write_csv(ds, args.out)
    return 0


def _cmd_reproduce(args) -> int:
    if args.experiment not in EXPERIMENTS:
        raise CliError(f"unknown experiment {args.experiment!r}; "
                       f"choose from {sorted(EXPERIMENTS)}")
    params = {}
    for key in ("eps", "alpha", "delta", "trials"):
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    report = run_experiment(args.experiment, seed=args.seed, **params)
    _emit(report.to_dict(), args.out)
    if args.raw_out and report.raw:
        fieldnames = list(report.raw[0])
        with open(args.raw_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(report.raw)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqodds",
        description="Equalized-odds auditing, correction, training, and the "
                    "second-moment relaxation for linear predictors.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="write the JSON report here (default stdout)")
        p.add_argument("--format", choices=["json"], default="json",
                       help="output format (json only)")

    p = sub.add_parser("audit", help="run the discrimination detection test")
    p.add_argument("--data", required=True)
    p.add_argument("--score-col", default="score")
    p.add_argument("--threshold", type=float, default=None,
                   help="binarize scores at this cut (default: treat scores "
                        "as acceptance probabilities)")
    p.add_argument("--alpha", type=float, required=True,
                   help="discrimination level the test should detect")
    p.add_argument("--delta", type=float, required=True,
                   help="allowed failure probability")
    p.add_argument("--cell-probs",
                   help="true joint cell probabilities p00,p01,p10,p11 in (y,a) order")
    common(p)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("correct", help="fit the optimal derived rule for a score column")
    p.add_argument("--data", required=True)
    p.add_argument("--score-col", default="score")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--tolerance", type=float, required=True,
                   help="cap on the corrected rule's cross-group gap")
    common(p)
    p.set_defaults(func=_cmd_correct)

    p = sub.add_parser("train", help="two-step training over a finite rule class")
    p.add_argument("--data", required=True)
    p.add_argument("--hypotheses", required=True,
                   help="JSON file describing the rule class")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--train-tolerance", type=_tolerance_arg, default="auto")
    p.add_argument("--correct-tolerance", type=_tolerance_arg, default="auto")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("fit-linear-fair",
                       help="correlation-constrained linear predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--label-col", default="y")
    p.add_argument("--protected-col", default="a")
    p.add_argument("--loss", choices=["squared", "logistic", "hinge_smooth"],
                   default="squared")
    p.add_argument("--method", choices=["closed-form", "derived", "pgd"],
                   default="closed-form")
    common(p)
    p.set_defaults(func=_cmd_fit_linear_fair)

    p = sub.add_parser("simulate", help="sample a dataset from a synthetic law")
    p.add_argument("--law", choices=["two-proxy", "erm-trap", "gaussian"],
                   required=True)
    p.add_argument("--noise", type=float, default=0.1,
                   help="two-proxy: attribute flip probability")
    p.add_argument("--features", type=int, default=16,
                   help="erm-trap: number of coordinates")
    p.add_argument("--alpha", type=float, default=0.05,
                   help="erm-trap: flip probability in the rare cell")
    p.add_argument("--dim", type=int, default=3, help="gaussian: feature dimension")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reproduce", help="run a reproduction experiment")
    p.add_argument("--experiment", required=True,
                   help=f"one of {sorted(EXPERIMENTS)}")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw-out", help="also write per-trial rows as CSV")
    common(p)
    p.set_defaults(func=_cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EqoddsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
