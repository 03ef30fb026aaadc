"""Dataset ingestion, encoding, splitting, and synthetic generation.

CSV columns that parse fully as numbers become continuous features with a
five-point quantile grid; anything else becomes a categorical feature with
integer codes in first-appearance order. The synthetic generator plants a
known optimal assignment so searches can be validated against ground truth.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .errors import ConfigError, DataError
from .nn import check_matrix
from .sensitivity import FeatureAssignment

QUANTILE_POINTS = (0.0, 0.25, 0.5, 0.75, 1.0)

_STD_NORMAL = NormalDist()


class FeatureKind(Enum):
    CATEGORICAL = "categorical"
    CONTINUOUS = "continuous"


@dataclass
class FeatureMeta:
    name: str
    kind: FeatureKind
    domain: np.ndarray  # candidate values, sorted ascending, no duplicates
    raw_categories: list[str] | None = None  # original text labels, code order

    def __post_init__(self):
        self.domain = np.asarray(self.domain, dtype=np.float64)
        if self.domain.size == 0:
            raise DataError(f"feature {self.name!r} has an empty domain")
        if np.any(np.diff(self.domain) <= 0):
            raise DataError(
                f"feature {self.name!r} domain must be strictly ascending"
            )


@dataclass
class Dataset:
    X: np.ndarray  # (m, n)
    Y: np.ndarray  # (m, L), binary
    features: list[FeatureMeta]
    label_names: list[str]

    def __post_init__(self):
        self.X = check_matrix(self.X, "X")
        self.Y = check_matrix(self.Y, "Y")
        if self.X.shape[0] != self.Y.shape[0]:
            raise DataError(
                f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}"
            )
        if len(self.features) != self.X.shape[1]:
            raise DataError(
                f"{len(self.features)} feature metas for {self.X.shape[1]} columns"
            )
        if len(self.label_names) != self.Y.shape[1]:
            raise DataError(
                f"{len(self.label_names)} label names for {self.Y.shape[1]} columns"
            )
        if not np.all((self.Y == 0.0) | (self.Y == 1.0)):
            raise DataError("Y entries must be 0 or 1")
        for j, meta in enumerate(self.features):
            if meta.kind is FeatureKind.CATEGORICAL:
                col = np.unique(self.X[:, j])
                if not np.all(np.isin(col, meta.domain)):
                    raise DataError(
                        f"column {meta.name!r} has values outside its domain"
                    )

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_labels(self) -> int:
        return self.Y.shape[1]

    @property
    def value_domains(self) -> list[np.ndarray]:
        return [f.domain for f in self.features]


def _parse_float(text: str) -> float | None:
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def quantile_domain(values: np.ndarray, points=QUANTILE_POINTS) -> np.ndarray:
    """Deduplicated quantile grid (min, quartiles, max by default)."""
    return np.unique(np.quantile(values, points))


def load_csv(path, label_columns: list[str]) -> Dataset:
    """Read a UTF-8 comma-separated file with a header row.

    `label_columns` name the binary target columns; every other column
    becomes a feature. Missing cells, ragged rows, and non-binary labels
    are rejected with the offending location.
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{p}: empty file, header row required")
    header = rows[0]
    body = rows[1:]
    if not body:
        raise DataError(f"{p}: no data rows")

    missing = [c for c in label_columns if c not in header]
    if missing:
        raise DataError(f"{p}: label columns not found: {missing}")
    label_idx = [header.index(c) for c in label_columns]
    feature_idx = [i for i in range(len(header)) if i not in label_idx]
    if not feature_idx:
        raise DataError(f"{p}: no feature columns left after labels")

    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(
                f"{p}: row {r} has {len(row)} cells, header has {len(header)}"
            )
        for c, cell in enumerate(row):
            if cell == "":
                raise DataError(f"{p}: missing cell at row {r}, column {header[c]!r}")

    m = len(body)
    Y = np.zeros((m, len(label_idx)))
    for li, c in enumerate(label_idx):
        for r, row in enumerate(body):
            v = _parse_float(row[c])
            if v is None or v not in (0.0, 1.0):
                raise DataError(
                    f"{p}: non-binary label {row[c]!r} at row {r + 2}, "
                    f"column {header[c]!r}"
                )
            Y[r, li] = v

    X = np.zeros((m, len(feature_idx)))
    features = []
    for fi, c in enumerate(feature_idx):
        cells = [row[c] for row in body]
        parsed = [_parse_float(s) for s in cells]
        if all(v is not None for v in parsed):
            col = np.array(parsed, dtype=np.float64)
            meta = FeatureMeta(header[c], FeatureKind.CONTINUOUS, quantile_domain(col))
        else:
            codes = {}
            col = np.empty(m)
            for r, s in enumerate(cells):
                if s not in codes:
                    codes[s] = len(codes)
                col[r] = codes[s]
            meta = FeatureMeta(
                header[c],
                FeatureKind.CATEGORICAL,
                np.arange(len(codes), dtype=np.float64),
                raw_categories=list(codes),
            )
        X[:, fi] = col
        features.append(meta)

    return Dataset(X, Y, features, list(label_columns))


def format_value(meta: FeatureMeta, value: float) -> str:
    """Display form of a model-space value: category text when known."""
    if meta.kind is FeatureKind.CATEGORICAL and meta.raw_categories is not None:
        hits = np.nonzero(np.abs(meta.domain - value) <= 1e-9)[0]
        if hits.size:
            return meta.raw_categories[int(hits[0])]
    return repr(float(value))


def save_csv(dataset: Dataset, path):
    """Export with categorical cells written as their original text."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in dataset.features] + dataset.label_names)
        for r in range(dataset.n_samples):
            cells = []
            for j, meta in enumerate(dataset.features):
                v = dataset.X[r, j]
                if meta.kind is FeatureKind.CATEGORICAL and meta.raw_categories:
                    cells.append(meta.raw_categories[int(round(v))])
                else:
                    cells.append(repr(float(v)))
            cells += [str(int(v)) for v in dataset.Y[r]]
            writer.writerow(cells)


def split(dataset: Dataset, test_fraction: float = 0.10, seed: int = 0,
          stratify: bool = False):
    """Seeded shuffle-then-cut partition. Returns (train, test).

    Metadata objects are shared between the two halves. With `stratify`,
    rows are grouped by their full label combination and each group is cut
    proportionally.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0,1), got {test_fraction}")
    m = dataset.n_samples
    rng = np.random.default_rng(seed)
    if stratify:
        test_rows = []
        train_rows = []
        groups = {}
        for r in range(m):
            groups.setdefault(tuple(dataset.Y[r]), []).append(r)
        for key in sorted(groups):
            rows = np.array(groups[key])
            perm = rows[rng.permutation(len(rows))]
            cut = int(round(len(rows) * test_fraction))
            test_rows.extend(perm[:cut])
            train_rows.extend(perm[cut:])
        test_idx = np.array(test_rows, dtype=int)
        train_idx = np.array(train_rows, dtype=int)
    else:
        perm = rng.permutation(m)
        cut = int(round(m * test_fraction))
        test_idx, train_idx = perm[:cut], perm[cut:]
    if len(test_idx) < 1 or len(train_idx) < 2:
        raise ConfigError(
            f"degenerate split: {len(train_idx)} train / {len(test_idx)} test rows"
        )
    train = Dataset(dataset.X[train_idx], dataset.Y[train_idx],
                    dataset.features, dataset.label_names)
    test = Dataset(dataset.X[test_idx], dataset.Y[test_idx],
                   dataset.features, dataset.label_names)
    return train, test, train_idx, test_idx


@dataclass
class Scaler:
    """Per-feature min-max map to [0,1], fitted on the training split.

    Also carries the model-space candidate grids: scaled codes for
    categorical features, scaled training-column quantiles for continuous.
    """

    mins: np.ndarray
    maxs: np.ndarray
    domains: list[np.ndarray]

    def _scale_column(self, j: int, col: np.ndarray) -> np.ndarray:
        span = self.maxs[j] - self.mins[j]
        if span == 0.0:
            return np.zeros_like(col)
        return (col - self.mins[j]) / span

    def transform(self, dataset: Dataset) -> Dataset:
        X = np.column_stack(
            [self._scale_column(j, dataset.X[:, j]) for j in range(dataset.n_features)]
        )
        metas = [
            replace(meta, domain=self.domains[j])
            for j, meta in enumerate(dataset.features)
        ]
        return Dataset(X, dataset.Y.copy(), metas, dataset.label_names)

    def inverse_value(self, j: int, scaled: float) -> float:
        return float(self.mins[j] + scaled * (self.maxs[j] - self.mins[j]))


def fit_scaler(train: Dataset) -> Scaler:
    mins = train.X.min(axis=0)
    maxs = train.X.max(axis=0)
    scaler = Scaler(mins, maxs, [])
    for j, meta in enumerate(train.features):
        if meta.kind is FeatureKind.CATEGORICAL:
            dom = scaler._scale_column(j, meta.domain)
        else:
            dom = quantile_domain(scaler._scale_column(j, train.X[:, j]))
        scaler.domains.append(np.unique(dom))
    return scaler


@dataclass
class SyntheticSpec:
    n_features: int
    n_samples: int
    label_count: int = 3
    planted_assignment: FeatureAssignment | None = None  # default: seeded full plant
    interaction_terms: tuple = ()  # (feature_a, feature_b, weight >= 0)
    noise_level: float = 0.0
    seed: int = 0
    values_per_feature: int = 3

    def validate(self):
        if self.n_features < 1 or self.n_samples < 1 or self.label_count < 1:
            raise ConfigError("n_features, n_samples, label_count must be >= 1")
        if self.values_per_feature < 2:
            raise ConfigError("values_per_feature must be >= 2")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        if self.planted_assignment is not None:
            for j, v in self.planted_assignment:
                if j >= self.n_features:
                    raise ConfigError(f"planted feature {j} out of range")
                if not 0 <= v <= self.values_per_feature - 1:
                    raise ConfigError(f"planted value {v} outside code range")
        for a, b, w in self.interaction_terms:
            if w < 0:
                raise ConfigError("interaction weights must be >= 0")
            if a >= self.n_features or b >= self.n_features:
                raise ConfigError("interaction feature index out of range")


@dataclass
class GroundTruth:
    """Generating parameters; the oracle behind planted-optimum tests."""

    spec: SyntheticSpec
    planted: FeatureAssignment
    weights: np.ndarray  # per-label slope on the mismatch distance
    biases: np.ndarray  # per-label intercept

    def mismatch(self, codes: np.ndarray) -> float:
        """Mean normalized |code - planted| over planted features."""
        scale = self.spec.values_per_feature - 1
        gaps = [abs(codes[j] - v) / scale for j, v in self.planted]
        return float(np.mean(gaps)) if gaps else 0.0

    def noiseless_logits(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.float64)
        scale = self.spec.values_per_feature - 1
        planted = dict(self.planted.pairs)
        inter = 0.0
        for a, b, w in self.spec.interaction_terms:
            ga = abs(codes[a] - planted[a]) / scale if a in planted else 0.0
            gb = abs(codes[b] - planted[b]) / scale if b in planted else 0.0
            inter += w * ga * gb
        return self.biases + self.weights * self.mismatch(codes) + inter

    def noiseless_probabilities(self, codes: np.ndarray) -> np.ndarray:
        z = self.noiseless_logits(codes)
        return 1.0 / (1.0 + np.exp(-z))

    def to_doc(self) -> dict:
        return {
            "planted_assignment": [[j, v] for j, v in self.planted],
            "weights": [float(w) for w in self.weights],
            "biases": [float(b) for b in self.biases],
            "interaction_terms": [list(t) for t in self.spec.interaction_terms],
            "noise_level": self.spec.noise_level,
            "n_features": self.spec.n_features,
            "n_samples": self.spec.n_samples,
            "label_count": self.spec.label_count,
            "values_per_feature": self.spec.values_per_feature,
            "seed": self.spec.seed,
        }


def _row_uniform(seed: int, tag: str, label: int, codes) -> float:
    """Uniform in (0,1), a pure function of (seed, tag, label, row values)."""
    key = f"{seed}|{tag}|{label}|" + ",".join(str(int(c)) for c in codes)
    h = hashlib.sha256(key.encode()).digest()
    return (int.from_bytes(h[:8], "big") + 0.5) / 2.0**64


def generate_synthetic(spec: SyntheticSpec):
    """Draw a dataset whose labels get likelier the farther a row sits from
    a planted assignment; that assignment therefore minimizes every label's
    probability. Returns (Dataset, GroundTruth).

    Label draws use per-row hashes, so at noise_level=0 the labels are a
    deterministic function of the feature row (two equal rows always get
    equal labels).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    K = spec.values_per_feature
    n, m, L = spec.n_features, spec.n_samples, spec.label_count

    planted = spec.planted_assignment
    if planted is None:
        planted = FeatureAssignment(
            tuple((j, float(c)) for j, c in enumerate(rng.integers(0, K, size=n)))
        )
    weights = 3.0 + 0.5 * np.arange(L)
    biases = -2.2 - 0.2 * np.arange(L)
    truth = GroundTruth(spec, planted, weights, biases)

    X = rng.integers(0, K, size=(m, n)).astype(np.float64)
    Y = np.zeros((m, L))
    for r in range(m):
        logits = truth.noiseless_logits(X[r])
        for l in range(L):
            z = logits[l]
            if spec.noise_level > 0:
                u = _row_uniform(spec.seed, "noise", l, X[r])
                z = z + spec.noise_level * _STD_NORMAL.inv_cdf(u)
            p = 1.0 / (1.0 + math.exp(-z))
            Y[r, l] = 1.0 if _row_uniform(spec.seed, "label", l, X[r]) < p else 0.0

    features = [
        FeatureMeta(f"f{j}", FeatureKind.CATEGORICAL, np.arange(K, dtype=np.float64))
        for j in range(n)
    ]
    label_names = [f"label{l}" for l in range(L)]
    return Dataset(X, Y, features, label_names), truth


def save_ground_truth(truth: GroundTruth, path):
    """Sidecar JSON recording the generator so tests can replay it."""
    doc = {"schema_version": 1, **truth.to_doc()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def imbalance_report(dataset: Dataset) -> np.ndarray:
    """Per-label positive fraction."""
    return dataset.Y.mean(axis=0)
