"""Graph-conditioned prediction: filter and augment candidate act sets,
rank them, and pick annotated responses by violation rate.

Conditioning follows one fixed order: union in the fired soft obligations,
then intersect with the allowed set. The order matters: an obligated act
whose hard gate is closed gets added and then removed again, and the audit
fields record both events (gross, not net).
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .core import ActionSet, CompletionVector
from .errors import NoCandidatesError, VocabularyError
from .graph import TODFlowGraph

STRATEGY_GREEDY = "greedy"
STRATEGY_COMPLIANCE = "compliance"
STRATEGY_MAJORITY = "majority"
STRATEGY_VIOLATION = "violation"
STRATEGY_UNIFORM = "uniform"
STRATEGIES = (
    STRATEGY_GREEDY,
    STRATEGY_COMPLIANCE,
    STRATEGY_MAJORITY,
    STRATEGY_VIOLATION,
    STRATEGY_UNIFORM,
)


@dataclass(frozen=True)
class Candidate:
    """One provider prediction: an act set at a preference rank."""

    acts: ActionSet
    provider_rank: int
    provider_score: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "acts", frozenset(self.acts))
        if self.provider_rank < 0:
            raise ValueError(f"provider_rank must be >= 0, got {self.provider_rank}")


@dataclass(frozen=True)
class ConditionedCandidate:
    """A candidate after conditioning, with a gross audit trail.

    added records every act the obligations union brought in; removed
    records every act the allowed filter took out, including obligated acts
    whose gate was closed (those appear in both fields).
    """

    original: Candidate
    final_acts: ActionSet
    added: ActionSet
    removed: ActionSet

    @property
    def compliance_size(self) -> int:
        return len(self.final_acts)

    @property
    def churn(self) -> int:
        return len(self.added) + len(self.removed)


@dataclass(frozen=True)
class RankingStrategy:
    kind: str
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in STRATEGIES:
            raise ValueError(
                f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}"
            )


@dataclass(frozen=True)
class SelectionAudit:
    strategy: RankingStrategy
    chosen_index: int
    conditioned: tuple[ConditionedCandidate, ...]


@dataclass(frozen=True)
class ResponseCandidate:
    """A generated utterance with externally annotated acts."""

    text: str
    acts: ActionSet
    provider_rank: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "acts", frozenset(self.acts))
        if self.provider_rank < 0:
            raise ValueError(f"provider_rank must be >= 0, got {self.provider_rank}")


def _check_acts(graph: TODFlowGraph, acts: ActionSet) -> None:
    n = len(graph.vocabulary)
    bad = [a for a in acts if not 0 <= a < n]
    if bad:
        raise VocabularyError(f"act indices {sorted(bad)} out of range for {n} acts")


def condition_candidate(
    graph: TODFlowGraph, completion: CompletionVector, candidate: Candidate
) -> ConditionedCandidate:
    """Apply the graph to one candidate: add obligations, filter by gates."""
    _check_acts(graph, candidate.acts)
    should = graph.should_acts(completion)
    allowed = graph.allowed_acts(completion)
    union = candidate.acts | should
    final = union & allowed
    return ConditionedCandidate(
        original=candidate,
        final_acts=final,
        added=should - candidate.acts,
        removed=union - final,
    )


def _rank_of(conditioned: Sequence[ConditionedCandidate], index: int) -> int:
    return conditioned[index].original.provider_rank


def _argmin_by(
    conditioned: Sequence[ConditionedCandidate], key
) -> int:
    """Index minimizing key, ties by lowest provider rank."""
    return min(
        range(len(conditioned)),
        key=lambda i: (key(conditioned[i]), _rank_of(conditioned, i)),
    )


def _uniform_index(
    strategy: RankingStrategy,
    completion: CompletionVector,
    candidates: Sequence[Candidate],
) -> int:
    # Digest-seeded so reruns are identical but different turns differ.
    h = hashlib.sha256()
    h.update(strategy.seed.to_bytes(8, "big", signed=True))
    h.update(bytes(completion.bits))
    for cand in candidates:
        h.update(b"|")
        h.update(",".join(map(str, sorted(cand.acts))).encode("ascii"))
        h.update(str(cand.provider_rank).encode("ascii"))
    return int.from_bytes(h.digest()[:8], "big") % len(candidates)


def rank_and_select(
    graph: TODFlowGraph,
    completion: CompletionVector,
    candidates: Sequence[Candidate],
    strategy: RankingStrategy,
) -> tuple[ActionSet, SelectionAudit]:
    """Condition every candidate and select one act set per the strategy.

    greedy returns the rank-0 candidate's raw acts untouched (the
    no-graph baseline); every other strategy selects among the conditioned
    candidates. All ties break by lowest provider rank.
    """
    candidates = list(candidates)
    if not candidates:
        raise NoCandidatesError("rank_and_select needs at least one candidate")
    ranks = [c.provider_rank for c in candidates]
    if len(set(ranks)) != len(ranks):
        raise ValueError(f"provider ranks must be unique, got {sorted(ranks)}")

    conditioned = tuple(
        condition_candidate(graph, completion, c) for c in candidates
    )

    kind = strategy.kind
    if kind == STRATEGY_GREEDY:
        chosen = min(range(len(candidates)), key=lambda i: ranks[i])
        selected = candidates[chosen].acts
        return selected, SelectionAudit(strategy, chosen, conditioned)
    if kind == STRATEGY_COMPLIANCE:
        chosen = _argmin_by(conditioned, lambda cc: -cc.compliance_size)
    elif kind == STRATEGY_MAJORITY:
        counts = Counter(cc.final_acts for cc in conditioned)
        chosen = _argmin_by(
            conditioned, lambda cc: -counts[cc.final_acts]
        )
    elif kind == STRATEGY_VIOLATION:
        chosen = _argmin_by(conditioned, lambda cc: cc.churn)
    else:  # uniform
        chosen = _uniform_index(strategy, completion, candidates)
    return conditioned[chosen].final_acts, SelectionAudit(strategy, chosen, conditioned)


def violation_rate(
    graph: TODFlowGraph, completion: CompletionVector, response: ResponseCandidate
) -> float:
    """Fraction of act slots in conflict with the graph:

        (|acts outside the allowed set| + |fired obligations not acted on|)
        / (|response acts| + |fired obligations|)

    and 0.0 when the denominator is empty (an act-free response against a
    quiet graph violates nothing).
    """
    _check_acts(graph, response.acts)
    allowed = graph.allowed_acts(completion)
    should = graph.should_acts(completion)
    violations = len(response.acts - allowed) + len(should - response.acts)
    denominator = len(response.acts) + len(should)
    return violations / denominator if denominator else 0.0


def select_response(
    graph: TODFlowGraph,
    completion: CompletionVector,
    responses: Sequence[ResponseCandidate],
) -> ResponseCandidate:
    """Pick the response with the lowest violation rate; ties go to the
    provider's preferred (lowest-rank) response."""
    responses = list(responses)
    if not responses:
        raise NoCandidatesError("select_response needs at least one response")
    return min(
        responses,
        key=lambda r: (violation_rate(graph, completion, r), r.provider_rank),
    )


__all__ = [
    "Candidate",
    "ConditionedCandidate",
    "RankingStrategy",
    "SelectionAudit",
    "ResponseCandidate",
    "condition_candidate",
    "rank_and_select",
    "violation_rate",
    "select_response",
    "STRATEGIES",
    "STRATEGY_GREEDY",
    "STRATEGY_COMPLIANCE",
    "STRATEGY_MAJORITY",
    "STRATEGY_VIOLATION",
    "STRATEGY_UNIFORM",
]
