"""Optimal derived randomized predictors.

A derived rule sees only the base prediction and the group, so it is fully
specified by four acceptance probabilities

    accept[yhat][a] = P(output = 1 | base = yhat, A = a)

and its conditional rates are the affine mix

    rate[y][a] = accept[1][a] * base_rate[y][a]
               + accept[0][a] * (1 - base_rate[y][a]).

Minimizing expected 0-1 loss under a cap on the cross-group rate gap is a
four-variable linear program over the unit box cut by four half-spaces.
That polytope is small enough to solve by exact vertex enumeration, which
is deterministic and needs no iterative solver; ties are broken by the
lexicographically smallest acceptance vector. Equality (zero-tolerance)
constraints run through the same path with the cap at zero.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import (
    BinaryPredictor,
    CellProbabilities,
    Dataset,
    EmptyCellError,
    GroupRates,
    InvalidParameterError,
    PredictorInput,
    empirical_rates,
)

_FEAS_TOL = 1e-9      # vertex feasibility slack
_TIE_TOL = 1e-12      # objective tie window for the lexicographic tie-break
# all ways to pick 4 active constraints out of the 12 rows (box + gap caps)
_COMBOS = np.array(list(itertools.combinations(range(12), 4)), dtype=np.intp)

# expected per-sample 0-1 loss of outputting `out` when the label is `y`
LOSS_01 = np.array([[0.0, 1.0], [1.0, 0.0]])
# hinge loss of the +-1 coded output against the +-1 coded label
LOSS_HINGE_PM1 = np.array([[0.0, 2.0], [2.0, 0.0]])


@dataclass(frozen=True)
class RateStatistics:
    """Base-rule conditional rates plus the joint cell probabilities."""

    rates: np.ndarray            # (2, 2) [y][a] acceptance rates of the base rule
    cells: CellProbabilities

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=np.float64)
        if r.shape != (2, 2):
            raise InvalidParameterError("rates must be 2x2")
        if np.isnan(r).any() or ((r < -1e-12) | (r > 1 + 1e-12)).any():
            raise InvalidParameterError("rates must be finite values in [0, 1]")
        object.__setattr__(self, "rates", np.clip(r, 0.0, 1.0))

    @classmethod
    def from_sample(cls, dataset: Dataset, predictor: PredictorInput) -> "RateStatistics":
        gr = empirical_rates(dataset, predictor)
        if not gr.all_cells_present:
            raise EmptyCellError(gr.empty_cells, "rate statistics")
        return cls(gr.rates, CellProbabilities.from_dataset(dataset))

    @classmethod
    def from_population(cls, law, predictor: BinaryPredictor) -> "RateStatistics":
        from .synthetic import population_rates
        return cls(population_rates(law, predictor).rates, law.cell_probabilities())


@dataclass(frozen=True)
class DerivedPredictor:
    """Randomized post hoc rule: four acceptance probabilities over (yhat, a)."""

    accept: np.ndarray           # (2, 2) [yhat][a]
    provenance: Tuple[str, ...] = ()

    def __post_init__(self):
        acc = np.asarray(self.accept, dtype=np.float64)
        if acc.shape != (2, 2):
            raise InvalidParameterError("accept table must be 2x2")
        if ((acc < -1e-9) | (acc > 1 + 1e-9)).any():
            raise InvalidParameterError("acceptance probabilities must lie in [0, 1]")
        object.__setattr__(self, "accept", np.clip(acc, 0.0, 1.0))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def as_rule(self, base: BinaryPredictor, name: Optional[str] = None) -> "DerivedRule":
        return DerivedRule(base, self, name)

    def to_flat(self) -> np.ndarray:
        """(accept[0,0], accept[0,1], accept[1,0], accept[1,1])."""
        return self.accept.ravel().copy()


class DerivedRule(BinaryPredictor):
    """A DerivedPredictor bound to its base rule; evaluates in expectation."""

    def __init__(self, base: BinaryPredictor, derived: DerivedPredictor,
                 name: Optional[str] = None):
        self.base = base
        self.derived = derived
        self.name = name or f"derived({base.name})"

    def predict_proba(self, features, attr):
        p_base = np.clip(np.asarray(self.base.predict_proba(features, attr),
                                    dtype=np.float64), 0.0, 1.0)
        a = (np.asarray(attr) > 0.5).astype(np.intp)
        acc = self.derived.accept
        return p_base * acc[1, a] + (1.0 - p_base) * acc[0, a]


def induced_rates(derived: DerivedPredictor, stats: RateStatistics) -> GroupRates:
    """Rates of the derived rule from the base rates via the affine identity."""
    g = stats.rates
    acc = derived.accept
    rates = np.empty((2, 2))
    for a in (0, 1):
        rates[:, a] = acc[1, a] * g[:, a] + acc[0, a] * (1.0 - g[:, a])
    return GroupRates(np.clip(rates, 0.0, 1.0))


def expected_loss_from_rates(rates: np.ndarray, cells: CellProbabilities,
                             cell_loss: np.ndarray = LOSS_01) -> float:
    """Population/expected loss of a rule given its conditional rates.

    ``cell_loss[y][out]`` is the loss of emitting ``out`` on label ``y``;
    the default is plain 0-1 loss.
    """
    r = np.asarray(rates, dtype=np.float64)
    t = cells.table
    total = 0.0
    for y in (0, 1):
        for a in (0, 1):
            total += t[y, a] * (r[y, a] * cell_loss[y, 1]
                                + (1.0 - r[y, a]) * cell_loss[y, 0])
    return float(total)


def derived_loss(derived: DerivedPredictor, stats: RateStatistics,
                 cell_loss: np.ndarray = LOSS_01) -> float:
    return expected_loss_from_rates(induced_rates(derived, stats).rates,
                                    stats.cells, cell_loss)


def _lp_coefficients(stats: RateStatistics, cell_loss: np.ndarray):
    """Objective c.v + const and constraint rows A v <= b over the flat accept vector.

    Flat order v = (accept[0,0], accept[0,1], accept[1,0], accept[1,1]).
    """
    g = stats.rates
    t = stats.cells.table
    c = np.zeros(4)
    const = 0.0
    for y in (0, 1):
        for a in (0, 1):
            # rate[y,a] = v[2 + a] * g[y,a] + v[a] * (1 - g[y,a])
            gain = cell_loss[y, 1] - cell_loss[y, 0]
            c[2 + a] += t[y, a] * gain * g[y, a]
            c[a] += t[y, a] * gain * (1.0 - g[y, a])
            const += t[y, a] * cell_loss[y, 0]
    return c, const


def _gap_rows(stats: RateStatistics):
    """Rows of rate[y,0] - rate[y,1] as linear functionals of the flat accept vector."""
    g = stats.rates
    rows = np.zeros((2, 4))
    for y in (0, 1):
        rows[y, 2 + 0] += g[y, 0]
        rows[y, 0] += 1.0 - g[y, 0]
        rows[y, 2 + 1] -= g[y, 1]
        rows[y, 1] -= 1.0 - g[y, 1]
    return rows


def optimal_derived(stats: RateStatistics, tolerance: float) -> DerivedPredictor:
    """Loss-minimizing derived rule with cross-group gap at most ``tolerance``.

    Solved by enumerating vertices of the feasible polytope (the unit box
    cut by the four gap half-spaces); the feasible set is never empty since
    constant mixes have zero gap. Among optimal vertices the
    lexicographically smallest acceptance vector wins, so the result is
    deterministic. The returned rule's induced gap is re-checked against
    the tolerance before returning.
    """
    if tolerance < 0.0:
        raise InvalidParameterError(f"tolerance must be nonnegative, got {tolerance}")
    cap = min(float(tolerance), 1.0)  # a gap can never exceed 1
    c, const = _lp_coefficients(stats, LOSS_01)
    gap_rows = _gap_rows(stats)

    # rows: v_i <= 1, -v_i <= 0, +-gap_y <= cap
    rows = np.vstack([np.eye(4), -np.eye(4), gap_rows, -gap_rows])
    rhs = np.concatenate([np.ones(4), np.zeros(4), np.full(4, cap)])

    mats = rows[_COMBOS]                      # (495, 4, 4)
    keep = np.abs(np.linalg.det(mats)) > 1e-12
    verts = np.linalg.solve(mats[keep], rhs[_COMBOS[keep]][..., None])[..., 0]
    verts = verts[np.isfinite(verts).all(axis=1)]
    feas = (verts @ rows.T <= rhs + _FEAS_TOL).all(axis=1)
    verts = np.clip(verts[feas], 0.0, 1.0)
    if verts.shape[0] == 0:
        raise RuntimeError("vertex enumeration found no feasible point")  # unreachable

    objs = verts @ c
    tied = verts[objs <= objs.min() + _TIE_TOL]
    v_star = min(tied, key=lambda v: tuple(v))
    derived = DerivedPredictor(v_star.reshape(2, 2),
                               provenance=(f"optimal@tol={tolerance:g}",))
    gap = induced_rates(derived, stats).gap()
    if gap > cap + 1e-10:
        raise RuntimeError(f"solver returned gap {gap} above tolerance {cap}")
    return derived


def _accept_for_target(g0: float, g1: float, f: float, t: float):
    """Acceptance pair (p0, p1) steering base rates (g0, g1) to rates (f, t).

    Solves f = p1 g0 + p0 (1 - g0), t = p1 g1 + p0 (1 - g1); the system is
    singular when the base rule is uninformative in the group (g0 == g1),
    in which case only f == t is reachable.
    """
    det = g0 - g1
    if abs(det) < 1e-12:
        if abs(f - t) > 1e-9:
            return None
        return f, f
    p1 = (f * (1.0 - g1) - t * (1.0 - g0)) / det
    p0 = (t * g0 - f * g1) / det
    return p0, p1


def _majority_constant(cells: CellProbabilities) -> float:
    p0, p1 = cells.label_marginals()
    return 1.0 if p1 > p0 else 0.0


def conservative_correction(stats: RateStatistics) -> DerivedPredictor:
    """Zero-gap derived rule built from the worse of each group's rates.

    Targets the larger false positive rate and the smaller true positive
    rate for both groups, which costs at most the base gap in extra loss.
    The construction wants the base rule oriented at least as well as
    chance in both groups (true positive rate >= 1/2 >= false positive
    rate); when the complemented rule satisfies that instead, the base is
    flipped first (recorded in provenance). If the target pair is not
    reachable inside a group (possible when no orientation holds), the
    rule degrades to the better constant, which is always derivable and
    still within the loss bound.
    """
    g = stats.rates
    provenance = ["conservative"]

    def oriented(tbl):
        return bool((tbl[1] >= 0.5).all() and (tbl[0] <= 0.5).all())

    flipped = False
    if not oriented(g) and oriented(1.0 - g):
        g = 1.0 - g
        flipped = True
        provenance.append("base_flipped")
    elif not oriented(g):
        provenance.append("orientation_unmet")

    f_target = float(g[0].max())
    t_target = float(g[1].min())

    accept = np.empty((2, 2))
    reachable = t_target >= f_target - 1e-12
    if reachable:
        for a in (0, 1):
            pair = _accept_for_target(g[0, a], g[1, a], f_target, t_target)
            if pair is None:
                reachable = False
                break
            accept[0, a], accept[1, a] = pair
        reachable = reachable and ((accept >= -1e-9) & (accept <= 1 + 1e-9)).all()
    if not reachable:
        # below-diagonal target: the better constant dominates it and is derivable
        const = _majority_constant(stats.cells)
        accept[:] = const
        provenance.append("constant_fallback")

    if flipped:
        accept = accept[::-1].copy()  # swap roles of base outputs 0 and 1

    derived = DerivedPredictor(accept, provenance=tuple(provenance))

    out_rates = induced_rates(derived, stats)
    assert out_rates.gap() <= 1e-9, "conservative correction must have zero gap"
    base_gap = GroupRates(stats.rates).gap()
    base_loss = expected_loss_from_rates(stats.rates, stats.cells)
    assert derived_loss(derived, stats) <= base_loss + base_gap + 1e-9, \
        "conservative correction exceeded its loss bound"
    return derived
