"""Synthetic joint laws and exact population oracles.

Three law families cover everything the rest of the library needs as
ground truth:

* ``FiniteJointLaw`` -- explicit atoms over (x, a, y) with exact
  probabilities; rates and losses are computed by enumeration, never by
  sampling.
* ``CellProductLaw`` -- a (Y, A) cell table with conditionally independent
  Bernoulli feature coordinates. Its support is exponential in the number
  of coordinates, so coordinate rules are evaluated analytically and
  generic rules only by enumeration at small dimension.
* ``GaussianJointLaw`` -- mean and covariance over (X..., A, Y) feeding the
  second-moment machinery.

The two benchmark constructions:

* ``two_proxy_law(eps)``: X and A are both noisy copies of a fair coin Y
  (X flips with probability 2*eps, A with eps), independent given Y. The
  attribute is the better proxy, so loss minimization alone locks onto it.
* ``erm_trap_family(n_features, alpha, cells)``: coordinate 0 is a fair
  predictor with error ``alpha`` while every other coordinate is wrong only
  inside one rare cell, making it strictly better on the population but
  group-asymmetric. Sample risk minimization is routinely trapped into
  picking a group-asymmetric coordinate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .core import (
    BinaryPredictor,
    CellProbabilities,
    ConstantRule,
    Dataset,
    FeatureThresholdRule,
    FiniteHypothesisClass,
    GroupRates,
    InvalidParameterError,
)

CODING_01 = "zero_one"
CODING_PM1 = "pm_one"

# enumeration guard for generic rules on product laws
_MAX_ENUM_COORDS = 16


@dataclass(frozen=True)
class FiniteJointLaw:
    """Finite-support distribution over (x, a, y) with exact probabilities."""

    x: np.ndarray        # (m, d) atom feature vectors
    attr: np.ndarray     # (m,) atom attribute values (0/1, or +-1 under pm_one)
    labels: np.ndarray   # (m,) atom label values
    probs: np.ndarray    # (m,) strictly positive, sums to 1
    coding: str = CODING_01

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        attr = np.asarray(self.attr, dtype=np.float64).ravel()
        labels = np.asarray(self.labels, dtype=np.float64).ravel()
        probs = np.asarray(self.probs, dtype=np.float64).ravel()
        m = probs.shape[0]
        if not (x.shape[0] == attr.shape[0] == labels.shape[0] == m and m > 0):
            raise InvalidParameterError("atom arrays must share a nonzero length")
        if (probs <= 0).any():
            raise InvalidParameterError("atom probabilities must be positive")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise InvalidParameterError(f"atom probabilities sum to {probs.sum()}")
        if self.coding not in (CODING_01, CODING_PM1):
            raise InvalidParameterError(f"unknown coding {self.coding!r}")
        lo = -1.0 if self.coding == CODING_PM1 else 0.0
        if not np.isin(attr, (lo, 1.0)).all() or not np.isin(labels, (lo, 1.0)).all():
            raise InvalidParameterError("attribute/label atoms outside coding alphabet")
        for name, arr in (("x", x), ("attr", attr), ("labels", labels), ("probs", probs)):
            object.__setattr__(self, name, arr)

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def label01(self) -> np.ndarray:
        """Labels mapped to {0, 1} regardless of coding."""
        return (self.labels > 0).astype(np.int64) if self.coding == CODING_PM1 \
            else self.labels.astype(np.int64)

    def attr01(self) -> np.ndarray:
        return (self.attr > 0).astype(np.int64) if self.coding == CODING_PM1 \
            else self.attr.astype(np.int64)

    def cell_probabilities(self) -> CellProbabilities:
        t = np.zeros((2, 2))
        y01, a01 = self.label01(), self.attr01()
        for i in range(self.probs.shape[0]):
            t[y01[i], a01[i]] += self.probs[i]
        return CellProbabilities(t)


@dataclass(frozen=True)
class CellProductLaw:
    """(Y, A) cell table with independent Bernoulli coordinates per cell.

    ``heads[y, a, j]`` is P(X_j = 1 | Y = y, A = a); coordinates are
    mutually independent inside each cell.
    """

    cells: CellProbabilities
    heads: np.ndarray  # (2, 2, d)

    def __post_init__(self):
        h = np.asarray(self.heads, dtype=np.float64)
        if h.ndim != 3 or h.shape[:2] != (2, 2):
            raise InvalidParameterError("heads must have shape (2, 2, d)")
        if ((h < 0) | (h > 1)).any():
            raise InvalidParameterError("head probabilities must lie in [0, 1]")
        object.__setattr__(self, "heads", h)

    @property
    def n_features(self) -> int:
        return self.heads.shape[2]

    def cell_probabilities(self) -> CellProbabilities:
        return self.cells

    def coordinate_rates(self, feature: int) -> np.ndarray:
        """Exact acceptance rates of the rule 1(x[feature] >= 1/2)."""
        return self.heads[:, :, feature].copy()

    def to_finite_law(self) -> FiniteJointLaw:
        """Explicit atom expansion; only viable at small dimension."""
        d = self.n_features
        if d > _MAX_ENUM_COORDS:
            raise InvalidParameterError(
                f"refusing to enumerate 2^{d} atoms; dimension above {_MAX_ENUM_COORDS}")
        xs, attrs, labels, probs = [], [], [], []
        for y in (0, 1):
            for a in (0, 1):
                p_cell = self.cells.table[y, a]
                if p_cell == 0:
                    continue
                h = self.heads[y, a]
                for bits in itertools.product((0, 1), repeat=d):
                    p = p_cell
                    for j, b in enumerate(bits):
                        p *= h[j] if b else 1.0 - h[j]
                    if p > 0:
                        xs.append(bits)
                        attrs.append(a)
                        labels.append(y)
                        probs.append(p)
        return FiniteJointLaw(np.array(xs, dtype=np.float64), attrs, labels, probs)


@dataclass(frozen=True)
class GaussianJointLaw:
    """Jointly Gaussian (X..., A, Y): a mean vector and a covariance matrix.

    Component order is (X_0 .. X_{d-1}, A, Y), matching SecondMomentModel.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise InvalidParameterError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise InvalidParameterError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise InvalidParameterError("covariance must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n_features(self) -> int:
        return self.mean.shape[0] - 2


Law = Union[FiniteJointLaw, CellProductLaw]


def two_proxy_law(eps: float, coding: str = CODING_01) -> FiniteJointLaw:
    """Fair coin label with two conditionally independent noisy proxies.

    P(Y=1) = 1/2, P(A = y | Y = y) = 1 - eps, P(X = y | Y = y) = 1 - 2*eps,
    with X and A independent given Y. Needs eps in (0, 1/4) so that the
    attribute beats the feature but both beat chance. Under ``pm_one``
    coding the same eight atoms carry values in {-1, +1} for use with
    margin losses.
    """
    if not 0.0 < eps < 0.25:
        raise InvalidParameterError(f"eps must lie in (0, 1/4), got {eps}")
    xs, attrs, labels, probs = [], [], [], []
    for y in (0, 1):
        for a in (0, 1):
            pa = (1.0 - eps) if a == y else eps
            for xv in (0, 1):
                px = (1.0 - 2.0 * eps) if xv == y else 2.0 * eps
                xs.append([xv])
                attrs.append(a)
                labels.append(y)
                probs.append(0.5 * pa * px)
    x = np.array(xs, dtype=np.float64)
    attr = np.array(attrs, dtype=np.float64)
    lab = np.array(labels, dtype=np.float64)
    if coding == CODING_PM1:
        x, attr, lab = 2 * x - 1, 2 * attr - 1, 2 * lab - 1
    return FiniteJointLaw(x, attr, lab, probs, coding=coding)


def erm_trap_family(n_features: int, alpha: float,
                    cells: Optional[CellProbabilities] = None
                    ) -> Tuple[CellProductLaw, FiniteHypothesisClass]:
    """Coordinate-rule family where sample ERM favors a group-asymmetric pick.

    Coordinate 0 equals the label except for an alpha-probability flip in
    every cell, so the rule x0 has error ``alpha`` and zero gap. Every other
    coordinate equals the label except inside the lowest-probability (y, a)
    cell, where it flips with probability alpha: error ``alpha * min_cell``
    (strictly smaller) and gap exactly ``alpha``. The returned class lists
    the coordinate threshold rules in order x0, x1, ...

    ``cells`` defaults to the uniform quarter table.
    """
    if n_features < 2:
        raise InvalidParameterError("need at least 2 coordinates")
    if not 0.0 < alpha < 0.5:
        raise InvalidParameterError(f"alpha must lie in (0, 1/2), got {alpha}")
    cells = cells or CellProbabilities.uniform()
    # ties prefer (1, 1): the canonical orientation for the construction
    noisy = min(((1, 1), (1, 0), (0, 1), (0, 0)), key=lambda c: cells.table[c])
    heads = np.zeros((2, 2, n_features))
    for y in (0, 1):
        for a in (0, 1):
            # coordinate 0: noisy copy of the label, same in every cell
            heads[y, a, 0] = 1.0 - alpha if y == 1 else alpha
            # others: exact copy of the label outside the noisy cell
            clean = float(y)
            if (y, a) == noisy:
                heads[y, a, 1:] = clean + (alpha if y == 0 else -alpha)
            else:
                heads[y, a, 1:] = clean
    law = CellProductLaw(cells, heads)
    rules = tuple(FeatureThresholdRule(j, 0.5, name=f"x{j}") for j in range(n_features))
    return law, FiniteHypothesisClass(rules)


def gaussian_law(d: int, seed: int, eig_low: float = 0.5,
                 eig_high: float = 2.0, mean_scale: float = 0.5) -> GaussianJointLaw:
    """Random (X..., A, Y) Gaussian with controlled spectrum, reproducible.

    The covariance is Q diag(lambda) Q^T for a seeded orthogonal Q and
    eigenvalues drawn uniformly from [eig_low, eig_high]; the smallest
    eigenvalue therefore never falls below ``eig_low``.
    """
    if d < 1:
        raise InvalidParameterError("need at least one feature dimension")
    if not 0.0 < eig_low <= eig_high:
        raise InvalidParameterError("need 0 < eig_low <= eig_high")
    rng = np.random.default_rng(seed)
    k = d + 2
    lam = rng.uniform(eig_low, eig_high, size=k)
    q, _ = np.linalg.qr(rng.normal(size=(k, k)))
    cov = (q * lam) @ q.T
    cov = 0.5 * (cov + cov.T)
    mean = mean_scale * rng.normal(size=k)
    return GaussianJointLaw(mean, cov)


def _atom_acceptance(law: FiniteJointLaw, predictor: BinaryPredictor) -> np.ndarray:
    vals = np.asarray(predictor.predict_proba(law.x, law.attr), dtype=np.float64).ravel()
    if vals.shape[0] != law.probs.shape[0]:
        raise InvalidParameterError("predictor returned wrong number of atom values")
    if ((vals < -1e-12) | (vals > 1 + 1e-12)).any():
        raise InvalidParameterError("predictor outputs outside [0, 1]")
    return np.clip(vals, 0.0, 1.0)


def population_rates(law: Law, predictor: BinaryPredictor) -> GroupRates:
    """Exact conditional acceptance rates P(pred = 1 | y, a) by enumeration."""
    if isinstance(law, CellProductLaw):
        if isinstance(predictor, FeatureThresholdRule) and 0.0 < predictor.cut <= 1.0:
            return GroupRates(law.coordinate_rates(predictor.feature))
        if isinstance(predictor, ConstantRule):
            return GroupRates(np.full((2, 2), predictor.value))
        return population_rates(law.to_finite_law(), predictor)
    vals = _atom_acceptance(law, predictor)
    y01, a01 = law.label01(), law.attr01()
    rates = np.zeros((2, 2))
    for y in (0, 1):
        for a in (0, 1):
            mask = (y01 == y) & (a01 == a)
            pc = float(law.probs[mask].sum())
            if pc == 0:
                raise InvalidParameterError(f"law has no mass in cell (y={y}, a={a})")
            rates[y, a] = float((law.probs[mask] * vals[mask]).sum()) / pc
    return GroupRates(rates)


def population_loss01(law: Law, predictor: BinaryPredictor) -> float:
    """Exact expected 0-1 loss over the law."""
    if isinstance(law, CellProductLaw):
        rates = population_rates(law, predictor).rates
        t = law.cells.table
        return float((t[0] * rates[0]).sum() + (t[1] * (1.0 - rates[1])).sum())
    vals = _atom_acceptance(law, predictor)
    y01 = law.label01().astype(np.float64)
    return float((law.probs * np.abs(vals - y01)).sum())


def population_loss_squared(law: FiniteJointLaw,
                            fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """Exact expected squared loss of a real-valued rule fn(x, a)."""
    preds = np.asarray(fn(law.x, law.attr), dtype=np.float64).ravel()
    return float((law.probs * (preds - law.labels) ** 2).sum())


def population_loss_hinge(law: FiniteJointLaw,
                          fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """Exact expected hinge loss max(0, 1 - y * r); requires pm_one coding."""
    if law.coding != CODING_PM1:
        raise InvalidParameterError("hinge loss needs a law with pm_one coding")
    preds = np.asarray(fn(law.x, law.attr), dtype=np.float64).ravel()
    return float((law.probs * np.maximum(0.0, 1.0 - law.labels * preds)).sum())


def sample_law(law: Union[Law, GaussianJointLaw], n: int, seed: int) -> Dataset:
    """Draw n i.i.d. rows; deterministic per seed."""
    if n < 1:
        raise InvalidParameterError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if isinstance(law, GaussianJointLaw):
        z = rng.multivariate_normal(law.mean, law.cov, size=n, method="cholesky")
        d = law.n_features
        return Dataset(z[:, :d], z[:, d], z[:, d + 1])
    if isinstance(law, CellProductLaw):
        cell_idx = rng.choice(4, size=n, p=law.cells.table.ravel())
        ys, as_ = cell_idx // 2, cell_idx % 2
        u = rng.random(size=(n, law.n_features))
        feats = (u < law.heads[ys, as_, :]).astype(np.float64)
        return Dataset(feats, as_, ys)
    if law.coding != CODING_01:
        raise InvalidParameterError("sampling is defined for zero_one coded laws")
    idx = rng.choice(law.probs.shape[0], size=n, p=law.probs)
    return Dataset(law.x[idx], law.attr[idx], law.labels[idx])


@dataclass(frozen=True)
class RegressionCase:
    """One norm-restricted regression scenario solved on the two-proxy law."""

    fair_weights: Tuple[float, float, float]    # (w_x, w_a, b), uses the feature only
    fair_loss: float                            # exact population squared loss
    optimal_weights: Tuple[float, float, float]  # in-class squared-loss optimum
    optimal_loss: float
    certificate_margin: float                   # min loss increase over the probe grid
    corrected_loss: float                       # best rule derived from the optimum


@dataclass(frozen=True)
class RegressionSolutions:
    eps: float
    l1_radius: float
    l1_case: RegressionCase
    sparse_case: RegressionCase


def _sq_loss_on_law(law: FiniteJointLaw, w_x: float, w_a: float, b: float) -> float:
    return population_loss_squared(
        law, lambda X, a: w_x * X[:, 0] + w_a * a + b)


def _probe_l1_optimum(law: FiniteJointLaw, radius: float, w: Tuple[float, float, float],
                      step: float = 1e-3) -> float:
    """Smallest loss increase over feasible grid perturbations around w.

    Probes all sign/coordinate combinations at offsets {-step, 0, +step}
    that keep |w_x| + |w_a| <= radius; a nonnegative return certifies local
    optimality at grid resolution.
    """
    base = _sq_loss_on_law(law, *w)
    worst = np.inf
    offsets = (-step, 0.0, step)
    for dx in offsets:
        for da in offsets:
            for db in offsets:
                if dx == da == db == 0.0:
                    continue
                wx, wa, wb = w[0] + dx, w[1] + da, w[2] + db
                if abs(wx) + abs(wa) > radius + 1e-15:
                    continue
                worst = min(worst, _sq_loss_on_law(law, wx, wa, wb) - base)
    return float(worst)


def _probe_sparse_optimum(law: FiniteJointLaw, w: Tuple[float, float, float],
                          step: float = 1e-3) -> float:
    """Grid certificate for the one-nonzero-weight class (perturb the active pair)."""
    base = _sq_loss_on_law(law, *w)
    worst = np.inf
    active = 0 if w[0] != 0.0 else 1
    for dz in (-step, step):
        for db in (-step, 0.0, step):
            pert = list(w)
            pert[active] += dz
            pert[2] += db
            worst = min(worst, _sq_loss_on_law(law, *pert) - base)
        pert = list(w)
        pert[2] += dz
        worst = min(worst, _sq_loss_on_law(law, *pert) - base)
    return float(worst)


def restricted_regression_solutions(eps: float) -> RegressionSolutions:
    """Closed-form solutions for squared-loss regression in two restricted classes.

    On the two-proxy law, the class of linear rules with |w_x| + |w_a|
    bounded by 1/2 - 2*eps (needs eps in (2/25, 1/4)) has its loss optimum
    on the attribute alone, at ((0, 1/2 - 2*eps, 1/4 + eps)); the fair
    alternative puts the whole budget on the feature. The one-nonzero-weight
    class behaves the same way with fair rule (1 - 4*eps) x + 2*eps. Every
    reported loss is computed by exact enumeration, and each optimum carries
    a grid certificate margin (no feasible probe improves it).

    Any rule ignoring A is gap-free here because X and A are independent
    given Y; a rule that is a deterministic function of A admits only
    label-independent corrections, so the best derived rule is the constant
    1/2 with squared loss 1/4.
    """
    if not 0.08 < eps < 0.25:
        raise InvalidParameterError(f"eps must lie in (2/25, 1/4), got {eps}")
    law = two_proxy_law(eps)
    radius = 0.5 - 2.0 * eps

    fair_l1 = (radius, 0.0, 0.25 + eps)
    opt_l1 = (0.0, radius, 0.25 + eps)
    l1_case = RegressionCase(
        fair_weights=fair_l1,
        fair_loss=_sq_loss_on_law(law, *fair_l1),
        optimal_weights=opt_l1,
        optimal_loss=_sq_loss_on_law(law, *opt_l1),
        certificate_margin=_probe_l1_optimum(law, radius, opt_l1),
        corrected_loss=_sq_loss_on_law(law, 0.0, 0.0, 0.5),
    )

    fair_sp = (1.0 - 4.0 * eps, 0.0, 2.0 * eps)
    opt_sp = (0.0, 1.0 - 2.0 * eps, eps)
    sparse_case = RegressionCase(
        fair_weights=fair_sp,
        fair_loss=_sq_loss_on_law(law, *fair_sp),
        optimal_weights=opt_sp,
        optimal_loss=_sq_loss_on_law(law, *opt_sp),
        certificate_margin=_probe_sparse_optimum(law, opt_sp),
        corrected_loss=_sq_loss_on_law(law, 0.0, 0.0, 0.5),
    )
    return RegressionSolutions(eps=eps, l1_radius=radius,
                               l1_case=l1_case, sparse_case=sparse_case)
