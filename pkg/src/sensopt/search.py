"""Beam search over feature-value assignments.

Candidates are scored by gamma = omega * (1 - lambda) + (1 - omega) * upsilon
per label, averaged over the objective's labels (lambda is the mean predicted
probability with the assignment enforced, upsilon the sensitivity score; the
maximize direction uses lambda instead of 1 - lambda). Each stage extends
every surviving assignment by one (feature, value) pair, then keeps the best
`zeta`. Ties always break on the lexicographic assignment key, so runs are
bit-for-bit reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import MLPModel, forward
from .sensitivity import (
    FeatureAssignment,
    ReferenceSet,
    clone_and_fix,
    reference_predictions,
    sensitivity_from_predictions,
)
from .surrogate import predict_sensitivity

TRACE_SCHEMA_VERSION = 1


class Direction(Enum):
    MINIMIZE_LABELS = "minimize"
    MAXIMIZE_LABELS = "maximize"


class SensitivityMode(Enum):
    ORACLE = "oracle"
    SURROGATE = "surrogate"


@dataclass(frozen=True)
class Objective:
    direction: Direction = Direction.MINIMIZE_LABELS
    label_subset: tuple | None = None  # None means every label

    def label_indices(self, n_labels: int) -> np.ndarray:
        if self.label_subset is None:
            return np.arange(n_labels)
        idx = np.asarray(self.label_subset, dtype=int)
        if idx.size == 0:
            raise ConfigError("label_subset must be non-empty")
        if len(set(idx.tolist())) != idx.size:
            raise ConfigError("label_subset has repeated indices")
        if np.any(idx < 0) or np.any(idx >= n_labels):
            raise ConfigError(
                f"label_subset {idx.tolist()} out of range for {n_labels} labels"
            )
        return idx

    def collapse(self, per_label: np.ndarray) -> float:
        """Mean over the objective's labels."""
        return float(per_label[self.label_indices(per_label.shape[0])].mean())


@dataclass
class SearchConfig:
    value_domains: list  # per-feature candidate values
    omega: float = 0.6
    zeta: int = 5
    max_depth: int | None = None  # None means number of features
    sensitivity_mode: SensitivityMode = SensitivityMode.ORACLE

    def validate(self, n_features: int | None = None):
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must be in [0,1], got {self.omega}")
        if self.zeta < 1:
            raise ConfigError(f"zeta must be >= 1, got {self.zeta}")
        if n_features is not None and len(self.value_domains) != n_features:
            raise ConfigError(
                f"{len(self.value_domains)} value domains for {n_features} features"
            )
        for j, dom in enumerate(self.value_domains):
            arr = np.asarray(dom, dtype=np.float64)
            if arr.size == 0:
                raise ConfigError(f"feature {j} has an empty value domain")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"feature {j} has non-finite candidate values")
        depth = self.depth()
        if depth < 0 or depth > len(self.value_domains):
            raise ConfigError(
                f"max_depth must be in [0, {len(self.value_domains)}], got {depth}"
            )

    def depth(self) -> int:
        return len(self.value_domains) if self.max_depth is None else self.max_depth


@dataclass
class Candidate:
    assignment: FeatureAssignment
    gamma: float
    lambda_per_label: np.ndarray
    upsilon_per_label: np.ndarray

    @property
    def key(self) -> tuple:
        return self.assignment.key

    def mean_lambda(self, objective: Objective) -> float:
        return objective.collapse(self.lambda_per_label)


def gamma_from(lambda_per_label: np.ndarray, upsilon_per_label: np.ndarray,
               omega: float, objective: Objective) -> float:
    """Collapse per-label scores into the scalar selection score."""
    lam = np.asarray(lambda_per_label, dtype=np.float64)
    ups = np.asarray(upsilon_per_label, dtype=np.float64)
    if lam.shape != ups.shape:
        raise ShapeError(f"lambda shape {lam.shape} != upsilon shape {ups.shape}")
    if objective.direction is Direction.MINIMIZE_LABELS:
        per_label = omega * (1.0 - lam) + (1.0 - omega) * ups
    else:
        per_label = omega * lam + (1.0 - omega) * ups
    return objective.collapse(per_label)


def lambda_of(M: MLPModel, T: ReferenceSet, a: FeatureAssignment) -> np.ndarray:
    """Per-label mean prediction over the reference set with `a` enforced."""
    return forward(M, clone_and_fix(T, a)).mean(axis=0)


@dataclass
class Scorer:
    """Bundles everything needed to turn an assignment into a Candidate.

    Reference predictions are computed once; each score then costs a single
    forward pass over the clone-and-fixed reference (oracle mode) or over
    one encoded row (surrogate mode, lambda still from the classifier).
    """

    model: MLPModel
    reference: ReferenceSet
    config: SearchConfig
    objective: Objective
    surrogate: MLPModel | None = None
    ref_predictions: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.config.sensitivity_mode is SensitivityMode.SURROGATE:
            if self.surrogate is None:
                raise ConfigError("surrogate mode selected but no surrogate given")
            if self.surrogate.n_inputs != 2 * self.reference.n_features:
                raise ShapeError(
                    f"surrogate input width {self.surrogate.n_inputs} does not "
                    f"match {self.reference.n_features} features"
                )
        if self.ref_predictions is None:
            self.ref_predictions = reference_predictions(self.model, self.reference)

    def score(self, assignment: FeatureAssignment) -> Candidate:
        fixed = forward(self.model, clone_and_fix(self.reference, assignment))
        lam = fixed.mean(axis=0)
        if self.config.sensitivity_mode is SensitivityMode.ORACLE:
            ups = sensitivity_from_predictions(fixed, self.ref_predictions)
        else:
            ups = predict_sensitivity(self.surrogate, assignment,
                                      self.reference).per_label
        gamma = gamma_from(lam, ups, self.config.omega, self.objective)
        return Candidate(assignment, gamma, lam, ups)


def score_candidate(M: MLPModel, T: ReferenceSet, a: FeatureAssignment,
                    omega: float, objective: Objective,
                    sensitivity_source=None) -> Candidate:
    """One-off scoring without a reusable Scorer.

    `sensitivity_source` is an optional surrogate model; None scores with
    the exact oracle.
    """
    mode = SensitivityMode.ORACLE if sensitivity_source is None \
        else SensitivityMode.SURROGATE
    cfg = SearchConfig(value_domains=[[0.0]] * T.n_features, omega=omega,
                       sensitivity_mode=mode)
    return Scorer(M, T, cfg, objective, surrogate=sensitivity_source).score(a)


def expand(beam: list, config: SearchConfig, scorer: Scorer) -> list:
    """Every one-pair extension of every beam member, scored. No dedup here:
    the same assignment reached through different parents appears once per
    parent; prune collapses them. Fully-assigned members contribute nothing.
    """
    if beam:
        arity = len(beam[0].assignment)
        if any(len(c.assignment) != arity for c in beam):
            raise ConfigError("beam members must share one arity")
    out = []
    for cand in beam:
        taken = cand.assignment.indices
        for j, domain in enumerate(config.value_domains):
            if j in taken:
                continue
            for v in np.asarray(domain, dtype=np.float64):
                out.append(scorer.score(cand.assignment.extend(j, float(v))))
    return out


def prune(candidates: list, zeta: int) -> list:
    """Keep the `zeta` best by gamma, ties to the lexicographically smaller
    assignment; result sorted best-first. Duplicate assignments (same
    canonical key) are collapsed before cutting so each beam slot holds a
    distinct assignment."""
    if zeta < 1:
        raise ConfigError(f"zeta must be >= 1, got {zeta}")
    unique = {}
    for c in candidates:
        unique.setdefault(c.key, c)
    ranked = sorted(unique.values(), key=lambda c: (-c.gamma, c.key))
    return ranked[:zeta]


def _better(challenger: Candidate, incumbent: Candidate | None) -> bool:
    if incumbent is None:
        return True
    if challenger.gamma != incumbent.gamma:
        return challenger.gamma > incumbent.gamma
    return challenger.key < incumbent.key


@dataclass
class StageRecord:
    stage: int
    candidates: list
    best_gamma: float  # running maximum over every candidate scored so far
    best_mean_lambda: float  # direction-best mean lambda within this stage


@dataclass
class SearchTrace:
    stages: list

    def best_gammas(self) -> list:
        return [s.best_gamma for s in self.stages]


def _stage_best_lambda(candidates: list, objective: Objective) -> float:
    values = [c.mean_lambda(objective) for c in candidates]
    if objective.direction is Direction.MINIMIZE_LABELS:
        return min(values)
    return max(values)


def run_search(M: MLPModel, T: ReferenceSet, config: SearchConfig,
               objective: Objective, surrogate: MLPModel | None = None):
    """Beam search from the empty assignment. Returns (SN, trace) where SN
    is the final beam plus the best candidate seen at any stage."""
    config.validate(T.n_features)
    scorer = Scorer(M, T, config, objective, surrogate=surrogate)

    empty = scorer.score(FeatureAssignment.empty())
    best = empty
    beam = [empty]
    stages = [StageRecord(0, beam, best.gamma,
                          _stage_best_lambda(beam, objective))]
    for depth in range(1, config.depth() + 1):
        scored = expand(beam, config, scorer)
        for c in scored:
            if _better(c, best):
                best = c
        beam = prune(scored, config.zeta)
        stages.append(StageRecord(depth, beam, best.gamma,
                                  _stage_best_lambda(beam, objective)))

    selected = {c.key: c for c in beam}
    selected.setdefault(best.key, best)
    sn = sorted(selected.values(), key=lambda c: (-c.gamma, c.key))
    return sn, SearchTrace(stages)


@dataclass
class FeatureEffect:
    feature: int
    value: float
    gamma: float
    gamma_delta: float  # gamma minus the empty assignment's gamma
    lambda_per_label: np.ndarray
    upsilon_per_label: np.ndarray


def top_feature_report(M: MLPModel, T: ReferenceSet, config: SearchConfig,
                       objective: Objective, k: int,
                       surrogate: MLPModel | None = None) -> list:
    """Rank every single-pair assignment by gamma; k best, full scan order.

    gamma_delta's sign marks pairs scoring below the do-nothing baseline."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    config.validate(T.n_features)
    scorer = Scorer(M, T, config, objective, surrogate=surrogate)
    gamma_empty = scorer.score(FeatureAssignment.empty()).gamma
    effects = []
    for j, domain in enumerate(config.value_domains):
        for v in np.asarray(domain, dtype=np.float64):
            c = scorer.score(FeatureAssignment.of((j, float(v))))
            effects.append(FeatureEffect(j, float(v), c.gamma,
                                         c.gamma - gamma_empty,
                                         c.lambda_per_label,
                                         c.upsilon_per_label))
    effects.sort(key=lambda e: (-e.gamma, e.feature, e.value))
    return effects[:k]


def format_assignment(a: FeatureAssignment, feature_names=None) -> str:
    """Semicolon-joined feature=value pairs, canonical order."""
    parts = []
    for j, v in sorted(a.pairs):
        name = feature_names[j] if feature_names else f"f{j}"
        parts.append(f"{name}={v!r}")
    return ";".join(parts)


def write_trace_csv(trace: SearchTrace, path, objective: Objective,
                    feature_names=None, method: str | None = None):
    """Stage-by-stage candidate table, one row per surviving candidate."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version={TRACE_SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        header = ["stage", "candidate_rank", "gamma", "mean_lambda", "assignment"]
        if method is not None:
            header.append("method")
        writer.writerow(header)
        for record in trace.stages:
            for rank, c in enumerate(record.candidates, start=1):
                row = [record.stage, rank, repr(c.gamma),
                       repr(c.mean_lambda(objective)),
                       format_assignment(c.assignment, feature_names)]
                if method is not None:
                    row.append(method)
                writer.writerow(row)
