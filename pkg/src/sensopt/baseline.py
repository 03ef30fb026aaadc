"""Exact reference optimizers.

Two baselines: full enumeration over every assignment up to a given arity
(the correctness oracle, budget-guarded because the count grows like a
product of domain sizes), and the sequential per-feature greedy that fixes
one feature at a time by its marginal effect. The greedy is cheap and exact
for additive responses but misses interactions; tests rely on both facts.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .errors import BudgetExceededError, ConfigError
from .nn import MLPModel
from .sensitivity import FeatureAssignment, ReferenceSet
from .search import Direction, Objective, Scorer, lambda_of

DEFAULT_BUDGET = 10**6


@dataclass
class BaselineStage:
    stage: int
    assignment: FeatureAssignment
    mean_lambda: float


@dataclass
class BaselineResult:
    method: str
    best_assignment: FeatureAssignment
    best_objective: float  # mean lambda over the objective's labels
    evaluations: int
    stage_trace: list


def _normalized_domains(value_domains) -> list:
    domains = []
    for j, dom in enumerate(value_domains):
        arr = np.asarray(dom, dtype=np.float64)
        if arr.size == 0:
            raise ConfigError(f"feature {j} has an empty value domain")
        domains.append(arr)
    return domains


def enumeration_size(value_domains, max_arity: int) -> int:
    """Number of assignments with arity <= max_arity, empty one included.

    Exact polynomial-coefficient count: the arity-r total is the sum over
    r-subsets of the product of their domain sizes.
    """
    counts = [1]  # counts[r] = assignments of arity r over features seen so far
    for dom in value_domains:
        size = len(dom)
        nxt = counts + [0]
        for r in range(len(counts), 0, -1):
            nxt[r] += counts[r - 1] * size
        counts = nxt
    return sum(counts[: max_arity + 1])


def enumerate_assignments(value_domains, max_arity: int):
    """Yield every assignment of arity 0..max_arity, deterministic order:
    arity ascending, feature subsets lexicographic, values in domain order."""
    domains = _normalized_domains(value_domains)
    n = len(domains)
    for arity in range(max_arity + 1):
        for subset in combinations(range(n), arity):
            for values in product(*(domains[j] for j in subset)):
                yield FeatureAssignment(
                    tuple((j, float(v)) for j, v in zip(subset, values))
                )


def _improves(value: float, key: tuple, best_value: float | None,
              best_key: tuple | None, direction: Direction) -> bool:
    if best_value is None:
        return True
    if value != best_value:
        if direction is Direction.MINIMIZE_LABELS:
            return value < best_value
        return value > best_value
    return key < best_key


def brute_force(M: MLPModel, T: ReferenceSet, value_domains,
                objective: Objective, max_arity: int | None = None,
                budget: int = DEFAULT_BUDGET) -> BaselineResult:
    """Exhaustive argmin/argmax of mean lambda over all assignments of arity
    <= max_arity. Refuses up front when the enumeration exceeds `budget`."""
    domains = _normalized_domains(value_domains)
    if len(domains) != T.n_features:
        raise ConfigError(
            f"{len(domains)} value domains for {T.n_features} features"
        )
    if max_arity is None:
        max_arity = len(domains)
    if not 0 <= max_arity <= len(domains):
        raise ConfigError(f"max_arity must be in [0, {len(domains)}]")
    size = enumeration_size(domains, max_arity)
    if size > budget:
        raise BudgetExceededError(size, budget)

    best_assignment = None
    best_value = None
    trace = []
    evaluations = 0
    stage_best = {}  # arity -> (value, key, assignment)
    for a in enumerate_assignments(domains, max_arity):
        value = objective.collapse(lambda_of(M, T, a))
        evaluations += 1
        arity = len(a)
        prev = stage_best.get(arity)
        if _improves(value, a.key, prev[0] if prev else None,
                     prev[1] if prev else None, objective.direction):
            stage_best[arity] = (value, a.key, a)
        if _improves(value, a.key,
                     best_value,
                     best_assignment.key if best_assignment else None,
                     objective.direction):
            best_value, best_assignment = value, a
    for arity in sorted(stage_best):
        value, _, a = stage_best[arity]
        trace.append(BaselineStage(arity, a, value))
    return BaselineResult("brute_force", best_assignment, best_value,
                          evaluations, trace)


def sequential_dp(M: MLPModel, T: ReferenceSet, value_domains,
                  objective: Objective,
                  feature_order=None) -> BaselineResult:
    """Fix features one at a time, each at the value that best moves the
    mean prediction given everything already fixed. Always commits a value
    per feature, so interactions it never looked ahead to are lost.

    Costs exactly sum of domain sizes plus one evaluation."""
    domains = _normalized_domains(value_domains)
    if len(domains) != T.n_features:
        raise ConfigError(
            f"{len(domains)} value domains for {T.n_features} features"
        )
    n = len(domains)
    if feature_order is None:
        feature_order = list(range(n))
    if sorted(feature_order) != list(range(n)):
        raise ConfigError("feature_order must be a permutation of all features")

    current = FeatureAssignment.empty()
    value = objective.collapse(lambda_of(M, T, current))
    evaluations = 1
    trace = [BaselineStage(0, current, value)]
    for step, j in enumerate(feature_order, start=1):
        best_v = None
        best_value = None
        for v in domains[j]:
            cand = current.extend(j, float(v))
            cand_value = objective.collapse(lambda_of(M, T, cand))
            evaluations += 1
            if _improves(cand_value, cand.key, best_value,
                         current.extend(j, best_v).key if best_v is not None else None,
                         objective.direction):
                best_value, best_v = cand_value, float(v)
        current = current.extend(j, best_v)
        value = best_value
        trace.append(BaselineStage(step, current, value))
    return BaselineResult("sequential", current, value, evaluations, trace)


def exhaustive_gamma_by_depth(scorer: Scorer, value_domains, max_depth: int,
                              budget: int = DEFAULT_BUDGET) -> list:
    """Best candidate by gamma at every arity 0..max_depth, scored exactly
    like the beam search (same Scorer, same tie-break); the oracle that a
    wide-enough beam must match depth for depth."""
    domains = _normalized_domains(value_domains)
    if not 0 <= max_depth <= len(domains):
        raise ConfigError(f"max_depth must be in [0, {len(domains)}]")
    size = enumeration_size(domains, max_depth)
    if size > budget:
        raise BudgetExceededError(size, budget)
    best = {}
    for a in enumerate_assignments(domains, max_depth):
        c = scorer.score(a)
        arity = len(a)
        prev = best.get(arity)
        if prev is None or (-c.gamma, c.key) < (-prev.gamma, prev.key):
            best[arity] = c
    return [best[arity] for arity in sorted(best)]
