"""Variance-ratio sensitivity of feature-value fixings.

The score for an assignment is, per output label, the covariance between
the model's predictions on a clone of the reference set with the assigned
columns overwritten and its predictions on the untouched reference set,
divided by the variance of the latter. Fixing nothing scores exactly 1,
fixing every column scores exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import DegenerateReferenceError, DomainError, ShapeError
from .nn import MLPModel, check_matrix, forward

DEGENERATE_VAR = 1e-12


@dataclass(frozen=True)
class FeatureAssignment:
    """An ordered set of (feature index, value) fixings; indices distinct."""

    pairs: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        norm = tuple((int(j), float(v)) for j, v in self.pairs)
        object.__setattr__(self, "pairs", norm)
        seen = set()
        for j, _ in norm:
            if j < 0:
                raise IndexError(f"feature index {j} is negative")
            if j in seen:
                raise ValueError(f"feature {j} assigned twice")
            seen.add(j)

    @classmethod
    def empty(cls) -> "FeatureAssignment":
        return cls(())

    @classmethod
    def of(cls, *pairs) -> "FeatureAssignment":
        return cls(tuple(pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def indices(self) -> frozenset:
        return frozenset(j for j, _ in self.pairs)

    def extend(self, feature: int, value: float) -> "FeatureAssignment":
        return FeatureAssignment(self.pairs + ((feature, value),))

    @property
    def key(self) -> tuple:
        """Canonical sort key: pairs ordered by feature index (tie-break rule)."""
        return tuple(sorted(self.pairs))


class ReferenceSource(Enum):
    TRAIN_SPLIT = "train"
    TEST_SPLIT = "test"


@dataclass
class ReferenceSet:
    """Frozen empirical distribution the sensitivity score averages over."""

    features: np.ndarray  # (k, n)
    source: ReferenceSource = ReferenceSource.TRAIN_SPLIT
    domains: list[np.ndarray] | None = None  # per-feature candidate values, optional

    def __post_init__(self):
        self.features = check_matrix(self.features, "reference features")
        if self.features.shape[0] < 2:
            raise ValueError(
                f"reference set needs >= 2 rows, got {self.features.shape[0]}"
            )
        if self.domains is not None:
            if len(self.domains) != self.features.shape[1]:
                raise ValueError(
                    f"{len(self.domains)} domains for {self.features.shape[1]} features"
                )
            self.domains = [np.asarray(d, dtype=np.float64) for d in self.domains]

    @classmethod
    def from_dataset(cls, dataset, source: ReferenceSource = ReferenceSource.TRAIN_SPLIT):
        """Build from any object exposing .X and .features[i].domain."""
        return cls(
            np.array(dataset.X, dtype=np.float64),
            source,
            [np.asarray(f.domain, dtype=np.float64) for f in dataset.features],
        )

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def column_means(self) -> np.ndarray:
        return self.features.mean(axis=0)


@dataclass
class SensitivityScore:
    per_label: np.ndarray

    def __post_init__(self):
        self.per_label = np.asarray(self.per_label, dtype=np.float64)
        if not np.isfinite(self.per_label).all():
            raise ValueError("sensitivity score has non-finite entries")

    @property
    def aggregate(self) -> float:
        return float(self.per_label.mean())


def validate_assignment(a: FeatureAssignment, T: ReferenceSet):
    """Check indices fit T's width and values lie in declared domains."""
    n = T.n_features
    for j, v in a:
        if j >= n:
            raise IndexError(f"feature index {j} out of range for {n} features")
        if T.domains is not None:
            dom = T.domains[j]
            if not np.any(np.abs(dom - v) <= 1e-12):
                raise DomainError(
                    f"value {v!r} not in declared domain of feature {j}"
                )


def clone_and_fix(T: ReferenceSet, a: FeatureAssignment) -> np.ndarray:
    """Copy of the reference features with the assigned columns overwritten."""
    validate_assignment(a, T)
    out = T.features.copy()
    for j, v in a:
        out[:, j] = v
    return out


def reference_predictions(M: MLPModel, T: ReferenceSet) -> np.ndarray:
    """forward(M, T.features); precompute once when scoring many assignments."""
    return forward(M, T.features)


def _check_reference_variance(var: np.ndarray):
    for label, v in enumerate(var):
        if v < DEGENERATE_VAR:
            raise DegenerateReferenceError(label, float(v))


def sensitivity_from_predictions(fixed: np.ndarray,
                                 ref: np.ndarray) -> np.ndarray:
    """Per-label cov(fixed, ref)/var(ref) over matched rows, population form."""
    if fixed.shape != ref.shape:
        raise ShapeError(
            f"prediction shapes differ: {fixed.shape} vs {ref.shape}"
        )
    ct = ref - ref.mean(axis=0)
    var = (ct * ct).mean(axis=0)
    _check_reference_variance(var)
    cc = fixed - fixed.mean(axis=0)
    cov = (cc * ct).mean(axis=0)
    # A constant column has zero covariance by definition; bypass the tiny
    # residue float centering would leave.
    constant = (fixed.max(axis=0) - fixed.min(axis=0)) == 0.0
    cov[constant] = 0.0
    return cov / var


def sensitivity_score(
    M: MLPModel,
    T: ReferenceSet,
    a: FeatureAssignment,
    ref_predictions_: np.ndarray | None = None,
) -> SensitivityScore:
    """Per-label covariance-over-variance score for one assignment.

    Population-form moments over matched row pairs. Pass `ref_predictions_`
    (the output of reference_predictions) to amortize repeated calls.
    """
    ref = ref_predictions_ if ref_predictions_ is not None else reference_predictions(M, T)
    fixed = forward(M, clone_and_fix(T, a))
    return SensitivityScore(sensitivity_from_predictions(fixed, ref))


def mean_sensitivity_over_values(
    M: MLPModel,
    T: ReferenceSet,
    base: FeatureAssignment,
    feature: int,
    values,
    ref_predictions_: np.ndarray | None = None,
) -> np.ndarray:
    """Aggregate score of base + (feature, v) for each candidate v, in order."""
    if feature in base.indices:
        raise ValueError(f"feature {feature} already assigned in base")
    if ref_predictions_ is None:
        ref_predictions_ = reference_predictions(M, T)
    return np.array(
        [
            sensitivity_score(M, T, base.extend(feature, v), ref_predictions_).aggregate
            for v in values
        ]
    )
