"""Shared data model for group-fair binary prediction.

Everything downstream works over four-cell statistics indexed by
(label, group): the conditional acceptance rates

    rates[y][a] = P(prediction = 1 | Y = y, A = a)

their cell counts, and the joint cell probabilities P(Y = y, A = a).
Randomized predictors are represented by their conditional acceptance
probability, so every rate and loss below is an expectation; nothing in
this module draws random bits.

All containers are immutable after construction and every operation is a
pure function, so concurrent use needs no coordination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np


class EqoddsError(Exception):
    """Base class for library errors."""


class InvalidParameterError(EqoddsError, ValueError):
    pass


class EmptyCellError(EqoddsError, ValueError):
    """A (label, group) cell required by the computation has no samples."""

    def __init__(self, cells, context: str = ""):
        self.cells = [(int(y), int(a)) for y, a in cells]
        msg = f"empty (y, a) cells: {self.cells}"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class TooFewSamplesError(EqoddsError, ValueError):
    pass


@dataclass(frozen=True)
class LabeledSample:
    """One observation: feature vector, binary group, binary label."""

    x: np.ndarray
    a: int
    y: int


@dataclass(frozen=True)
class Dataset:
    """Columnar dataset with stable row order.

    ``features`` is (n, d) float; ``attr`` and ``labels`` are (n,) and hold
    the protected attribute and the target. Binary operations require both
    to take values in {0, 1}; real-valued targets are allowed so the same
    container feeds the least-squares machinery. ``scores`` is an optional
    per-row prediction column.
    """

    features: np.ndarray
    attr: np.ndarray
    labels: np.ndarray
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        attr = np.asarray(self.attr, dtype=np.float64).ravel()
        labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if feats.shape[0] != attr.shape[0] or attr.shape[0] != labels.shape[0]:
            raise InvalidParameterError(
                f"row mismatch: features {feats.shape[0]}, attr {attr.shape[0]}, "
                f"labels {labels.shape[0]}"
            )
        if feats.shape[0] == 0:
            raise InvalidParameterError("dataset must be nonempty")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "attr", attr)
        object.__setattr__(self, "labels", labels)
        if self.scores is not None:
            scores = np.asarray(self.scores, dtype=np.float64).ravel()
            if scores.shape[0] != feats.shape[0]:
                raise InvalidParameterError("scores length does not match rows")
            object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_binary(self) -> bool:
        return bool(
            np.isin(self.attr, (0.0, 1.0)).all()
            and np.isin(self.labels, (0.0, 1.0)).all()
        )

    def require_binary(self) -> "Dataset":
        if not self.is_binary:
            raise InvalidParameterError("attr and labels must take values in {0, 1}")
        return self

    def sample(self, i: int) -> LabeledSample:
        return LabeledSample(self.features[i].copy(), int(self.attr[i]), int(self.labels[i]))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        scores = None if self.scores is None else self.scores[idx]
        return Dataset(self.features[idx], self.attr[idx], self.labels[idx], scores)

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample],
                     scores: Optional[Sequence[float]] = None) -> "Dataset":
        feats = np.stack([np.asarray(s.x, dtype=np.float64).ravel() for s in samples])
        return cls(feats,
                   np.array([s.a for s in samples], dtype=np.float64),
                   np.array([s.y for s in samples], dtype=np.float64),
                   None if scores is None else np.asarray(scores, dtype=np.float64))


@dataclass(frozen=True)
class CellProbabilities:
    """Joint probabilities P(Y = y, A = a) as a (2, 2) table indexed [y][a]."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.shape != (2, 2):
            raise InvalidParameterError("cell table must be 2x2")
        if (t < -1e-15).any():
            raise InvalidParameterError("cell probabilities must be nonnegative")
        if abs(float(t.sum()) - 1.0) > 1e-9:
            raise InvalidParameterError(f"cell probabilities sum to {t.sum()}, not 1")
        object.__setattr__(self, "table", np.clip(t, 0.0, None))

    @property
    def min_cell(self) -> float:
        return float(self.table.min())

    def label_marginals(self) -> np.ndarray:
        """P(Y = 0), P(Y = 1)."""
        return self.table.sum(axis=1)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "CellProbabilities":
        dataset.require_binary()
        t = np.empty((2, 2))
        for y in (0, 1):
            for a in (0, 1):
                t[y, a] = np.mean((dataset.labels == y) & (dataset.attr == a))
        return cls(t)

    @classmethod
    def from_flat(cls, values: Iterable[float]) -> "CellProbabilities":
        """Build from (p00, p01, p10, p11) listed in (y, a) order."""
        vals = [float(v) for v in values]
        if len(vals) != 4:
            raise InvalidParameterError("expected four cell probabilities")
        return cls(np.array(vals).reshape(2, 2))

    @classmethod
    def uniform(cls) -> "CellProbabilities":
        return cls(np.full((2, 2), 0.25))


@dataclass(frozen=True)
class GroupRates:
    """Conditional acceptance rates with (optionally) their cell counts.

    ``rates[y][a]`` estimates P(prediction = 1 | Y = y, A = a). ``counts``
    is present for sample-based tables and ``None`` for population tables.
    Empty sample cells carry NaN in ``rates`` and 0 in ``counts``; they do
    not abort construction because plain loss evaluation is still valid,
    but ``gap()`` refuses to certify on them.
    """

    rates: np.ndarray
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=np.float64)
        if r.shape != (2, 2):
            raise InvalidParameterError("rates table must be 2x2")
        object.__setattr__(self, "rates", r)
        if self.counts is not None:
            c = np.asarray(self.counts, dtype=np.int64)
            if c.shape != (2, 2) or (c < 0).any():
                raise InvalidParameterError("counts must be a nonnegative 2x2 table")
            object.__setattr__(self, "counts", c)
        finite = r[~np.isnan(r)]
        if finite.size and ((finite < -1e-12) | (finite > 1 + 1e-12)).any():
            raise InvalidParameterError("rates must lie in [0, 1]")

    @property
    def empty_cells(self):
        if self.counts is None:
            return [tuple(idx) for idx in np.argwhere(np.isnan(self.rates))]
        return [tuple(idx) for idx in np.argwhere(self.counts == 0)]

    @property
    def all_cells_present(self) -> bool:
        return not self.empty_cells

    def gap(self) -> float:
        """Largest cross-group rate difference, max over labels.

        Raises EmptyCellError when any cell is unpopulated: a gap computed
        from a missing conditional is meaningless.
        """
        empty = self.empty_cells
        if empty:
            raise EmptyCellError(empty, "discrimination gap")
        d = np.abs(self.rates[:, 0] - self.rates[:, 1])
        return float(d.max())


PredictorInput = Union["BinaryPredictor", np.ndarray, Sequence[float]]


class BinaryPredictor:
    """Evaluable decision rule (x, a) -> {0, 1}, possibly randomized.

    ``predict_proba`` returns P(output = 1 | x, a) per row; deterministic
    rules return exactly 0.0 or 1.0.
    """

    name: str = "predictor"

    def predict_proba(self, features: np.ndarray, attr: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def on_dataset(self, dataset: Dataset) -> np.ndarray:
        out = np.asarray(self.predict_proba(dataset.features, dataset.attr),
                         dtype=np.float64).ravel()
        if out.shape[0] != len(dataset):
            raise InvalidParameterError(f"{self.name}: wrong output length")
        if ((out < -1e-12) | (out > 1 + 1e-12)).any():
            raise InvalidParameterError(f"{self.name}: outputs outside [0, 1]")
        return np.clip(out, 0.0, 1.0)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class ConstantRule(BinaryPredictor):
    def __init__(self, value: float, name: Optional[str] = None):
        if not 0.0 <= value <= 1.0:
            raise InvalidParameterError("constant rule value must be in [0, 1]")
        self.value = float(value)
        self.name = name or f"const{value:g}"

    def predict_proba(self, features, attr):
        return np.full(np.asarray(attr).shape[0], self.value)


class AttributeRule(BinaryPredictor):
    """Predicts the protected attribute itself."""

    def __init__(self, name: str = "attr"):
        self.name = name

    def predict_proba(self, features, attr):
        return np.asarray(attr, dtype=np.float64).copy()


class FeatureThresholdRule(BinaryPredictor):
    """1(x[feature] >= cut); the workhorse one-dimensional threshold rule."""

    def __init__(self, feature: int, cut: float, name: Optional[str] = None):
        self.feature = int(feature)
        self.cut = float(cut)
        self.name = name or f"x{feature}>={cut:g}"

    def predict_proba(self, features, attr):
        return (np.asarray(features)[:, self.feature] >= self.cut).astype(np.float64)


class FunctionRule(BinaryPredictor):
    """Wraps a vectorized callable (features, attr) -> acceptance probabilities."""

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], name: str):
        self.fn = fn
        self.name = name

    def predict_proba(self, features, attr):
        return np.asarray(self.fn(features, attr), dtype=np.float64)


@dataclass(frozen=True)
class FiniteHypothesisClass:
    """Ordered, named, finite list of candidate rules."""

    rules: tuple = field(default_factory=tuple)

    def __post_init__(self):
        rules = tuple(self.rules)
        if not rules:
            raise InvalidParameterError("hypothesis class must be nonempty")
        names = [r.name for r in rules]
        if len(set(names)) != len(names):
            raise InvalidParameterError(f"duplicate rule names: {names}")
        object.__setattr__(self, "rules", rules)

    def __len__(self):
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    @property
    def names(self):
        return [r.name for r in self.rules]


def _acceptance_values(dataset: Dataset, predictor: PredictorInput) -> np.ndarray:
    if isinstance(predictor, BinaryPredictor):
        return predictor.on_dataset(dataset)
    vals = np.asarray(predictor, dtype=np.float64).ravel()
    if vals.shape[0] != len(dataset):
        raise InvalidParameterError("per-row acceptance values have wrong length")
    if ((vals < -1e-12) | (vals > 1 + 1e-12)).any():
        raise InvalidParameterError("acceptance values outside [0, 1]")
    return np.clip(vals, 0.0, 1.0)


def empirical_rates(dataset: Dataset, predictor: PredictorInput) -> GroupRates:
    """Sample conditional acceptance rates of a rule, cell by cell.

    ``predictor`` is either a BinaryPredictor or a precomputed per-row
    acceptance array (e.g. a score column). Cells with no samples get a
    NaN rate and a zero count rather than an error; consumers that need
    all four conditionals check ``all_cells_present``.
    """
    dataset.require_binary()
    vals = _acceptance_values(dataset, predictor)
    rates = np.full((2, 2), np.nan)
    counts = np.zeros((2, 2), dtype=np.int64)
    for y in (0, 1):
        for a in (0, 1):
            mask = (dataset.labels == y) & (dataset.attr == a)
            counts[y, a] = int(mask.sum())
            if counts[y, a]:
                rates[y, a] = float(vals[mask].sum()) / counts[y, a]
    return GroupRates(rates, counts)


def empirical_loss(dataset: Dataset, predictor: PredictorInput) -> float:
    """Mean expected 0-1 loss; randomized rules contribute expected mistakes."""
    dataset.require_binary()
    vals = _acceptance_values(dataset, predictor)
    return float(np.mean(np.abs(vals - dataset.labels)))


def split_dataset(dataset: Dataset, seed: int):
    """Seeded shuffle-and-halve; the first half gets the extra odd sample.

    The union of the two halves equals the input as a multiset, and the
    same seed always reproduces the same split.
    """
    n = len(dataset)
    if n < 2:
        raise TooFewSamplesError(f"need at least 2 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    k = (n + 1) // 2
    return dataset.subset(order[:k]), dataset.subset(order[k:])
