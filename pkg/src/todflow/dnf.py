"""Boolean conditions in disjunctive normal form over completion bits.

A condition is a disjunction of clauses; each clause is a conjunction of
signed act literals. The empty disjunction is constant False; a clause with
no literals makes the whole condition constant True. Conditions normalize at
construction: contradictory clauses are dropped, duplicates and supersets
removed, and clause pairs that differ only in one literal's sign merge into
their common part. All of these rewrites preserve the truth table.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import VocabularyError

Clause = frozenset


@dataclass(frozen=True, order=True)
class Literal:
    """One signed act reference: act_index must be set (positive) or unset
    (negative) in the completion for the literal to hold."""

    act_index: int
    positive: bool = True

    def __post_init__(self) -> None:
        if self.act_index < 0:
            raise ValueError("act_index must be non-negative")

    def negated(self) -> "Literal":
        return Literal(self.act_index, not self.positive)

    def holds(self, bits: Sequence[bool]) -> bool:
        return bool(bits[self.act_index]) == self.positive


def _clause_key(clause: Clause) -> tuple:
    return (len(clause), tuple(sorted((l.act_index, not l.positive) for l in clause)))


def _normalize(raw: Iterable[Iterable[Literal]]) -> tuple[Clause, ...]:
    clauses: set[Clause] = set()
    for item in raw:
        clause = frozenset(item)
        by_index: dict[int, bool] = {}
        contradictory = False
        for lit in clause:
            if by_index.setdefault(lit.act_index, lit.positive) != lit.positive:
                contradictory = True
                break
        if contradictory:
            continue
        if not clause:
            return (frozenset(),)  # True absorbs everything
        clauses.add(clause)

    changed = True
    while changed:
        changed = False
        # merge pairs differing only in one literal's sign: (x&R)|(!x&R) == R
        for a, b in combinations(sorted(clauses, key=_clause_key), 2):
            if len(a) != len(b):
                continue
            diff = a ^ b
            if len(diff) != 2:
                continue
            l1, l2 = sorted(diff)
            if l1.act_index == l2.act_index and l1.positive != l2.positive:
                merged = a & b
                clauses.discard(a)
                clauses.discard(b)
                if not merged:
                    return (frozenset(),)
                clauses.add(merged)
                changed = True
                break
        if changed:
            continue
        # a clause that is a superset of another is redundant
        redundant = {c for c in clauses if any(o < c for o in clauses)}
        if redundant:
            clauses -= redundant
            changed = True
    return tuple(sorted(clauses, key=_clause_key))


@dataclass(frozen=True)
class DNFCondition:
    """Normalized DNF over act indices. Use of()/true()/false() to build."""

    clauses: tuple[Clause, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "clauses", _normalize(self.clauses))

    @classmethod
    def true(cls) -> "DNFCondition":
        return cls((frozenset(),))

    @classmethod
    def false(cls) -> "DNFCondition":
        return cls(())

    @classmethod
    def of(cls, clauses: Iterable[Iterable[Literal]]) -> "DNFCondition":
        return cls(tuple(frozenset(c) for c in clauses))

    @classmethod
    def single(cls, literals: Iterable[Literal]) -> "DNFCondition":
        return cls.of([literals])

    @classmethod
    def from_indices(cls, clauses: Iterable[Iterable[tuple[int, bool]]]) -> "DNFCondition":
        """Build from [(act_index, positive), ...] clause lists."""
        return cls.of(
            [[Literal(i, positive) for i, positive in clause] for clause in clauses]
        )

    @property
    def is_true(self) -> bool:
        return self.clauses == (frozenset(),)

    @property
    def is_false(self) -> bool:
        return not self.clauses

    @property
    def is_constant(self) -> bool:
        return self.is_true or self.is_false

    def literal_count(self) -> int:
        return sum(len(c) for c in self.clauses)

    def max_index(self) -> int:
        """Largest act index referenced, or -1 for constants."""
        return max((l.act_index for c in self.clauses for l in c), default=-1)

    def evaluate(self, bits: Sequence[bool]) -> bool:
        """Evaluate against a completion. Index out of range raises
        VocabularyError."""
        if self.max_index() >= len(bits):
            raise VocabularyError(
                f"literal index {self.max_index()} out of range for completion "
                f"of length {len(bits)}"
            )
        return any(all(lit.holds(bits) for lit in clause) for clause in self.clauses)

    def evaluate_batch(self, matrix: np.ndarray) -> np.ndarray:
        """Vectorized evaluate over a [rows, n_acts] boolean matrix."""
        matrix = np.asarray(matrix, dtype=bool)
        if matrix.ndim != 2:
            raise ValueError("expected a 2-d completion matrix")
        if self.max_index() >= matrix.shape[1]:
            raise VocabularyError(
                f"literal index {self.max_index()} out of range for completion "
                f"of length {matrix.shape[1]}"
            )
        out = np.zeros(matrix.shape[0], dtype=bool)
        if self.is_true:
            out[:] = True
            return out
        for clause in self.clauses:
            hit = np.ones(matrix.shape[0], dtype=bool)
            for lit in clause:
                col = matrix[:, lit.act_index]
                hit &= col if lit.positive else ~col
            out |= hit
        return out

    def to_payload(self) -> list[list[dict]]:
        """JSON-ready clause list: [[{"i": idx, "neg": bool}, ...], ...]."""
        return [
            [
                {"i": lit.act_index, "neg": not lit.positive}
                for lit in sorted(clause)
            ]
            for clause in self.clauses
        ]

    @classmethod
    def from_payload(cls, payload: object) -> "DNFCondition":
        """Inverse of to_payload. Raises ValueError on malformed payloads;
        callers wrap with location context."""
        if not isinstance(payload, list):
            raise ValueError("condition must be a list of clauses")
        clauses = []
        for ci, clause in enumerate(payload):
            if not isinstance(clause, list):
                raise ValueError(f"clause {ci} must be a list of literals")
            lits = []
            for li, lit in enumerate(clause):
                if not isinstance(lit, dict):
                    raise ValueError(f"literal {ci}/{li} must be an object")
                if "i" not in lit:
                    raise ValueError(f"literal {ci}/{li} is missing 'i'")
                idx = lit["i"]
                if not isinstance(idx, int) or isinstance(idx, bool) or idx < 0:
                    raise ValueError(f"literal {ci}/{li} has invalid index {idx!r}")
                neg = lit.get("neg", False)
                if not isinstance(neg, bool):
                    raise ValueError(f"literal {ci}/{li} has non-boolean 'neg'")
                lits.append(Literal(idx, not neg))
            clauses.append(lits)
        return cls.of(clauses)

    def pretty(self, labels=None) -> str:
        """Render for humans; labels may be a sequence or expose label_of."""
        if self.is_true:
            return "TRUE"
        if self.is_false:
            return "FALSE"

        def name(i: int) -> str:
            if labels is None:
                return str(i)
            if hasattr(labels, "label_of"):
                return labels.label_of(i)
            return labels[i]

        parts = []
        for clause in self.clauses:
            lits = [
                ("" if lit.positive else "!") + name(lit.act_index)
                for lit in sorted(clause)
            ]
            parts.append(" & ".join(lits) if len(lits) == 1 else "(" + " & ".join(lits) + ")")
        return " | ".join(parts)
