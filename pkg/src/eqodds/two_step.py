"""Two-step learning: constrained risk minimization, then derived correction.

Step 1 scans a finite hypothesis class on one half of the data and keeps
the lowest-loss rule whose sample gap stays under a tolerance. Step 2 fits
the optimal derived randomized rule on the other, independent half under
its own gap tolerance. Splitting matters: correcting on fresh data keeps
the final gap guarantee free of the hypothesis-class complexity that the
step-1 gap inevitably picks up.

The ``auto`` tolerance schedule is

    2 * max_cell sqrt(2 * log(64 / delta) / (n * P_cell))

with empirical cell frequencies standing in for the true ones and n the
full training size; shrinking at that rate keeps every zero-gap rule
feasible with high probability while forcing the gap toward zero as data
grows.

Infeasible step 1 falls back to the better constant rule (constants always
have zero sample gap) and flags the result instead of erroring: an empty
feasible set signals a data problem worth surfacing, not crashing on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import (
    BinaryPredictor,
    CellProbabilities,
    ConstantRule,
    Dataset,
    EmptyCellError,
    FeatureThresholdRule,
    FiniteHypothesisClass,
    InvalidParameterError,
    empirical_loss,
    empirical_rates,
    split_dataset,
)
from .posthoc import (
    DerivedPredictor,
    DerivedRule,
    RateStatistics,
    derived_loss,
    induced_rates,
    optimal_derived,
)

Tolerance = Union[float, str]


@dataclass(frozen=True)
class TwoStepConfig:
    delta: float = 0.1
    train_tolerance: Tolerance = "auto"     # step-1 sample-gap cap
    correct_tolerance: Tolerance = "auto"   # step-2 sample-gap cap
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.delta < 0.5:
            raise InvalidParameterError(f"delta must lie in (0, 1/2), got {self.delta}")
        for name in ("train_tolerance", "correct_tolerance"):
            v = getattr(self, name)
            if isinstance(v, str):
                if v != "auto":
                    raise InvalidParameterError(f"{name} must be a float or 'auto'")
            elif v < 0:
                raise InvalidParameterError(f"{name} must be nonnegative")


def auto_tolerance(n: int, delta: float, cells: CellProbabilities) -> float:
    """Gap-tolerance schedule shrinking at the sample-gap concentration rate."""
    if n < 1:
        raise InvalidParameterError("n must be positive")
    min_cell = cells.min_cell
    if min_cell <= 0:
        raise EmptyCellError(
            [tuple(i) for i in np.argwhere(cells.table == 0)], "auto tolerance")
    return 2.0 * math.sqrt(2.0 * math.log(64.0 / delta) / (n * min_cell))


@dataclass(frozen=True)
class Step1Result:
    """Constrained risk minimization outcome on the training half."""

    rule: BinaryPredictor
    loss: float                      # sample loss on the training half
    gap: float                       # sample gap on the training half
    tolerance: float
    forced_constant: bool            # no class member was feasible
    feasible: tuple = ()             # names of feasible class members


def constrained_erm(dataset: Dataset, hclass: FiniteHypothesisClass,
                    tolerance: float) -> Step1Result:
    """Lowest-loss rule with sample gap strictly under ``tolerance``.

    Exhaustive scan in class order; ties keep the earlier rule. When no
    member is feasible the better constant rule is returned with the
    ``forced_constant`` flag set. All four (y, a) cells must be populated.
    """
    if tolerance < 0:
        raise InvalidParameterError("tolerance must be nonnegative")
    probe = empirical_rates(dataset, ConstantRule(1.0))
    if not probe.all_cells_present:
        raise EmptyCellError(probe.empty_cells, "constrained risk minimization")

    best = None
    feasible_names = []
    for rule in hclass:
        gap = empirical_rates(dataset, rule).gap()
        if gap >= tolerance:
            continue
        feasible_names.append(rule.name)
        loss = empirical_loss(dataset, rule)
        if best is None or loss < best[1]:  # strict: earlier rule wins ties
            best = (rule, loss, gap)

    if best is not None:
        rule, loss, gap = best
        return Step1Result(rule=rule, loss=loss, gap=gap, tolerance=tolerance,
                           forced_constant=False, feasible=tuple(feasible_names))

    # constants always have zero sample gap; pick the better one
    candidates = [ConstantRule(0.0), ConstantRule(1.0)]
    losses = [empirical_loss(dataset, c) for c in candidates]
    pick = int(np.argmin(losses))
    return Step1Result(rule=candidates[pick], loss=losses[pick], gap=0.0,
                       tolerance=tolerance, forced_constant=True, feasible=())


def fit_correction(dataset: Dataset, base: BinaryPredictor,
                   tolerance: float) -> DerivedPredictor:
    """Step 2: optimal derived rule for ``base`` fitted on an independent sample."""
    stats = RateStatistics.from_sample(dataset, base)
    return optimal_derived(stats, tolerance)


@dataclass(frozen=True)
class TwoStepResult:
    step1: Step1Result
    derived: DerivedPredictor
    corrected_rule: DerivedRule
    train_tolerance: float
    correct_tolerance: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "step1_rule": self.step1.rule.name,
            "step1_loss": self.step1.loss,
            "step1_gap": self.step1.gap,
            "forced_constant": self.step1.forced_constant,
            "accept": self.derived.accept.tolist(),
            "train_tolerance": self.train_tolerance,
            "correct_tolerance": self.correct_tolerance,
            "diagnostics": self.diagnostics,
        }


def train_two_step(data: Dataset, hclass: FiniteHypothesisClass,
                   config: TwoStepConfig = TwoStepConfig(),
                   population=None) -> TwoStepResult:
    """Split, constrained-minimize on half one, correct on half two.

    ``population`` optionally supplies the generating law; when present the
    diagnostics include exact population loss and gap of both the step-1
    rule and the corrected rule.
    """
    data.require_binary()
    if len(data) < 8:
        raise InvalidParameterError(f"need at least 8 samples, got {len(data)}")
    s1, s2 = split_dataset(data, config.seed)
    for name, half in (("first half", s1), ("second half", s2)):
        probe = empirical_rates(half, ConstantRule(1.0))
        if not probe.all_cells_present:
            raise EmptyCellError(probe.empty_cells, name)

    cells_hat = CellProbabilities.from_dataset(data)
    n = len(data)
    t_train = (auto_tolerance(n, config.delta, cells_hat)
               if config.train_tolerance == "auto" else float(config.train_tolerance))
    t_correct = (auto_tolerance(n, config.delta, cells_hat)
                 if config.correct_tolerance == "auto" else float(config.correct_tolerance))

    step1 = constrained_erm(s1, hclass, t_train)
    derived = fit_correction(s2, step1.rule, t_correct)
    corrected = derived.as_rule(step1.rule)

    s2_stats = RateStatistics.from_sample(s2, step1.rule)
    diagnostics = {
        "s1_loss": step1.loss,
        "s1_gap": step1.gap,
        "s2_base_loss": empirical_loss(s2, step1.rule),
        "s2_base_gap": empirical_rates(s2, step1.rule).gap(),
        "s2_corrected_loss": derived_loss(derived, s2_stats),
        "s2_corrected_gap": induced_rates(derived, s2_stats).gap(),
    }
    if population is not None:
        from .synthetic import population_rates
        pop_stats = RateStatistics.from_population(population, step1.rule)
        diagnostics["population"] = {
            "base_loss": float(
                (pop_stats.cells.table[0] * pop_stats.rates[0]).sum()
                + (pop_stats.cells.table[1] * (1 - pop_stats.rates[1])).sum()),
            "base_gap": population_rates(population, step1.rule).gap(),
            "corrected_loss": derived_loss(derived, pop_stats),
            "corrected_gap": induced_rates(derived, pop_stats).gap(),
        }
    return TwoStepResult(step1=step1, derived=derived, corrected_rule=corrected,
                         train_tolerance=t_train, correct_tolerance=t_correct,
                         diagnostics=diagnostics)


def threshold_class(dataset: Dataset, features: Optional[list] = None,
                    max_cuts_per_feature: int = 32,
                    include_constants: bool = True) -> FiniteHypothesisClass:
    """One-dimensional threshold rules at observed cut points.

    For each requested feature, cuts are midpoints between consecutive
    distinct observed values (subsampled evenly past the cap) plus one cut
    below all values. Constants are appended so the class always contains
    feasible members.
    """
    features = list(range(dataset.n_features)) if features is None else list(features)
    rules = []
    for j in features:
        vals = np.unique(dataset.features[:, j])
        cuts = [float(vals[0]) - 1.0]
        mids = (vals[1:] + vals[:-1]) / 2.0
        if mids.shape[0] > max_cuts_per_feature:
            idx = np.linspace(0, mids.shape[0] - 1, max_cuts_per_feature).astype(int)
            mids = mids[np.unique(idx)]
        cuts.extend(float(m) for m in mids)
        for k, cut in enumerate(cuts):
            rules.append(FeatureThresholdRule(j, cut, name=f"x{j}>={cut:.6g}"))
    if include_constants:
        rules.extend([ConstantRule(0.0), ConstantRule(1.0)])
    return FiniteHypothesisClass(tuple(rules))
