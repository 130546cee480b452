"""Core domain types shared across the package.

Acts and database results are flat string labels ("SYSTEM inform phone",
"query_success"). An ActVocabulary assigns each label a dense index, and all
bit-vectors downstream are laid out in vocabulary order. Everything here is
immutable after construction and safe to share across threads; this module
does no I/O and no learning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping

from .errors import EmptyCorpusError, VocabularyError

SPEAKER_USER = "user"
SPEAKER_SYSTEM = "system"
SPEAKER_DB = "db"
SPEAKERS = (SPEAKER_USER, SPEAKER_SYSTEM, SPEAKER_DB)

# Set of act indices; always interpreted against a specific ActVocabulary.
ActionSet = frozenset


def normalize_label(label: str) -> str:
    """Collapse internal whitespace and strip the ends."""
    return " ".join(label.split())


@dataclass(frozen=True)
class ActVocabulary:
    """Bijective map between act labels and dense indices, insertion ordered.

    Labels must already be whitespace-normalized and unique; use from_labels
    to build one leniently from raw corpus labels.
    """

    labels: tuple[str, ...]
    _index: Mapping[str, int] = field(
        init=False, repr=False, compare=False, default=None
    )

    def __post_init__(self) -> None:
        index: dict[str, int] = {}
        for pos, label in enumerate(self.labels):
            if not isinstance(label, str) or not label:
                raise VocabularyError(f"act label at position {pos} is empty")
            if label != normalize_label(label):
                raise VocabularyError(
                    f"act label at position {pos} is not whitespace-normalized: {label!r}"
                )
            if label in index:
                raise VocabularyError(f"duplicate act label: {label!r}")
            index[label] = pos
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "ActVocabulary":
        """Build a vocabulary from raw labels, normalizing and deduplicating
        while preserving first-occurrence order."""
        seen: dict[str, None] = {}
        for raw in labels:
            if not isinstance(raw, str):
                raise VocabularyError(f"act label must be a string, got {type(raw).__name__}")
            label = normalize_label(raw)
            if not label:
                raise VocabularyError("act label is empty after normalization")
            seen.setdefault(label)
        return cls(tuple(seen))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __contains__(self, label: object) -> bool:
        return isinstance(label, str) and normalize_label(label) in self._index

    def index_of(self, label: str) -> int:
        try:
            return self._index[normalize_label(label)]
        except KeyError:
            raise VocabularyError(f"unknown act label: {label!r}") from None

    def label_of(self, index: int) -> str:
        if not 0 <= index < len(self.labels):
            raise VocabularyError(f"act index {index} out of range for {len(self.labels)} acts")
        return self.labels[index]

    def encode(self, labels: Iterable[str]) -> ActionSet:
        return frozenset(self.index_of(label) for label in labels)

    def decode(self, indices: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.label_of(i) for i in sorted(indices))

    def to_list(self) -> list[str]:
        return list(self.labels)


@dataclass(frozen=True)
class CompletionVector:
    """Boolean vector over the vocabulary: which acts / db results have
    occurred so far. Grows monotonically along a trajectory."""

    bits: tuple[bool, ...]

    @classmethod
    def zeros(cls, n: int) -> "CompletionVector":
        return cls((False,) * n)

    @classmethod
    def from_true_indices(cls, n: int, indices: Iterable[int]) -> "CompletionVector":
        on = set(indices)
        bad = [i for i in on if not 0 <= i < n]
        if bad:
            raise VocabularyError(f"act index {bad[0]} out of range for {n} acts")
        return cls(tuple(i in on for i in range(n)))

    def __len__(self) -> int:
        return len(self.bits)

    def __getitem__(self, index: int) -> bool:
        return self.bits[index]

    def true_indices(self) -> ActionSet:
        return frozenset(i for i, b in enumerate(self.bits) if b)

    def with_indices(self, indices: Iterable[int]) -> "CompletionVector":
        """New vector with the given indices also set."""
        on = set(indices)
        if not on:
            return self
        bad = [i for i in on if not 0 <= i < len(self.bits)]
        if bad:
            raise VocabularyError(
                f"act index {bad[0]} out of range for {len(self.bits)} acts"
            )
        return CompletionVector(
            tuple(b or (i in on) for i, b in enumerate(self.bits))
        )

    def issuperset(self, other: "CompletionVector") -> bool:
        return len(self.bits) == len(other.bits) and all(
            a or not b for a, b in zip(self.bits, other.bits)
        )

    def as_labels(self, vocabulary: ActVocabulary) -> tuple[str, ...]:
        return vocabulary.decode(self.true_indices())


@dataclass(frozen=True)
class TurnRecord:
    """One speaker turn: who spoke, which act labels were annotated, and the
    optional utterance text / database result label."""

    speaker: str
    acts: tuple[str, ...] = ()
    utterance: str | None = None
    db_result: str | None = None

    def __post_init__(self) -> None:
        if self.speaker not in SPEAKERS:
            raise ValueError(
                f"speaker must be one of {SPEAKERS}, got {self.speaker!r}"
            )
        # normalize + dedupe labels, preserving first occurrence
        seen: dict[str, None] = {}
        for raw in self.acts:
            if not isinstance(raw, str):
                raise ValueError(f"act label must be a string, got {type(raw).__name__}")
            label = normalize_label(raw)
            if not label:
                raise ValueError("act label is empty after normalization")
            seen.setdefault(label)
        object.__setattr__(self, "acts", tuple(seen))
        if self.db_result is not None:
            norm = normalize_label(self.db_result)
            if not norm:
                raise ValueError("db_result is empty after normalization")
            object.__setattr__(self, "db_result", norm)
        if self.speaker == SPEAKER_DB and self.db_result is None:
            raise ValueError("db turns must carry a db_result label")


@dataclass(frozen=True)
class Trajectory:
    """One dialogue: a domain id plus an ordered, non-empty turn sequence.

    traj_id gives the trajectory a stable identity for splitting and replay;
    meta carries producer-side flags (for example the simulator's
    terminated_early / noise_events counters).
    """

    domain_id: str
    turns: tuple[TurnRecord, ...]
    traj_id: str | None = None
    meta: Mapping[str, Any] | None = None

    def __post_init__(self) -> None:
        if not self.domain_id:
            raise ValueError("domain_id must be non-empty")
        if not self.turns:
            raise ValueError("a trajectory must contain at least one turn")
        object.__setattr__(self, "turns", tuple(self.turns))


@dataclass(frozen=True)
class GraphExample:
    """One supervised example for graph inference: completion-so-far plus the
    act set performed at this turn."""

    completion: CompletionVector
    action: ActionSet
    turn_index: int
    trajectory_id: str

    def __post_init__(self) -> None:
        if self.turn_index < 0:
            raise ValueError("turn_index must be non-negative")
        n = len(self.completion)
        bad = [i for i in self.action if not 0 <= i < n]
        if bad:
            raise VocabularyError(f"act index {bad[0]} out of range for {n} acts")
        object.__setattr__(self, "action", frozenset(self.action))


def vocabulary_from_trajectories(trajectories: Iterable[Trajectory]) -> ActVocabulary:
    """Collect every act label and db_result label in first-occurrence order.

    Raises EmptyCorpusError when no trajectory is given.
    """
    labels: dict[str, None] = {}
    count = 0
    for traj in trajectories:
        count += 1
        for turn in traj.turns:
            for label in turn.acts:
                labels.setdefault(label)
            if turn.db_result is not None:
                labels.setdefault(turn.db_result)
    if count == 0:
        raise EmptyCorpusError("no trajectories given")
    return ActVocabulary(tuple(labels))
