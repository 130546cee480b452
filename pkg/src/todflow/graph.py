"""The per-act condition graph: container, queries, JSON and DOT export,
and structural edits.

Each act in the vocabulary owns an entry of DNF conditions over completion
bits: can_shdnt (merged hard gate: the act may be performed), shd (soft
obligation: the act ought to be performed now), and an optional can_only slot
kept for the regularized-precondition baseline. Missing entries default to
can_shdnt = True, shd = False.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any, Iterable, Mapping, Sequence

from .core import ActionSet, ActVocabulary, CompletionVector
from .dnf import DNFCondition, Literal
from .errors import EditError, GraphFormatError, VocabularyError

GRAPH_VERSION = 1

EDIT_SET_CONDITION = "set_condition"
EDIT_ADD_CLAUSE = "add_clause"
EDIT_REMOVE_CLAUSE = "remove_clause"
EDIT_OPS = (EDIT_SET_CONDITION, EDIT_ADD_CLAUSE, EDIT_REMOVE_CLAUSE)
EDIT_TARGETS = ("can_shdnt", "shd")


@dataclass(frozen=True)
class ActEntry:
    """Conditions attached to one act."""

    can_shdnt: DNFCondition = DNFCondition.true()
    shd: DNFCondition = DNFCondition.false()
    can_only: DNFCondition | None = None


@dataclass(frozen=True)
class TODFlowGraph:
    """Vocabulary-aligned condition entries plus free-form metadata.

    metadata is conventionally a dict with domain_id, objective_kind, the
    learn-config snapshot, corpus_fingerprint, and (for synthetic domains)
    per-act roles; none of it affects graph semantics.
    """

    vocabulary: ActVocabulary
    entries: tuple[ActEntry, ...]
    metadata: Mapping[str, Any]

    def __post_init__(self) -> None:
        n = len(self.vocabulary)
        if len(self.entries) != n:
            raise ValueError(
                f"expected {n} entries for {n} acts, got {len(self.entries)}"
            )
        for i, entry in enumerate(self.entries):
            for cond_name in ("can_shdnt", "shd", "can_only"):
                cond = getattr(entry, cond_name)
                if cond is not None and cond.max_index() >= n:
                    raise ValueError(
                        f"entry for act {i} references index {cond.max_index()} "
                        f"outside the {n}-act vocabulary in {cond_name}"
                    )
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def empty(
        cls, vocabulary: ActVocabulary, metadata: Mapping[str, Any] | None = None
    ) -> "TODFlowGraph":
        """All-default graph: everything allowed, nothing obligated."""
        return cls(
            vocabulary=vocabulary,
            entries=tuple(ActEntry() for _ in range(len(vocabulary))),
            metadata=dict(metadata or {}),
        )

    def entry(self, act: int) -> ActEntry:
        return self.entries[act]

    def can_shdnt(self, act: int) -> DNFCondition:
        return self.entries[act].can_shdnt

    def shd(self, act: int) -> DNFCondition:
        return self.entries[act].shd

    def _check_size(self, completion: CompletionVector) -> None:
        if len(completion) != len(self.vocabulary):
            raise VocabularyError(
                f"completion has {len(completion)} bits, "
                f"vocabulary has {len(self.vocabulary)} acts"
            )

    def allowed_acts(self, completion: CompletionVector) -> ActionSet:
        """Acts whose merged hard gate fires at this completion."""
        self._check_size(completion)
        return frozenset(
            i
            for i, entry in enumerate(self.entries)
            if entry.can_shdnt.evaluate(completion.bits)
        )

    def should_acts(self, completion: CompletionVector) -> ActionSet:
        """Acts whose soft obligation fires at this completion."""
        self._check_size(completion)
        return frozenset(
            i
            for i, entry in enumerate(self.entries)
            if entry.shd.evaluate(completion.bits)
        )

    def with_entry(self, act: int, entry: ActEntry) -> "TODFlowGraph":
        entries = list(self.entries)
        entries[act] = entry
        return TODFlowGraph(
            vocabulary=self.vocabulary, entries=tuple(entries), metadata=self.metadata
        )

    def with_metadata(self, **updates: Any) -> "TODFlowGraph":
        merged = dict(self.metadata)
        merged.update(updates)
        return TODFlowGraph(
            vocabulary=self.vocabulary, entries=self.entries, metadata=merged
        )


def eval_condition(condition: DNFCondition, completion: CompletionVector) -> bool:
    """Evaluate one DNF condition against a completion vector."""
    return condition.evaluate(completion.bits)


def allowed_acts(graph: TODFlowGraph, completion: CompletionVector) -> ActionSet:
    return graph.allowed_acts(completion)


def should_acts(graph: TODFlowGraph, completion: CompletionVector) -> ActionSet:
    return graph.should_acts(completion)


def obligation_view(graph: TODFlowGraph, keep: Iterable[int]) -> TODFlowGraph:
    """Copy of the graph with obligations kept only for the given acts.

    Conditioning a turn should never inject another speaker's obligations,
    so callers narrow shd to the acts of the role being predicted. Allow
    conditions are untouched.
    """
    kept = frozenset(keep)
    entries = tuple(
        entry if i in kept or entry.shd.is_false
        else replace(entry, shd=DNFCondition.false())
        for i, entry in enumerate(graph.entries)
    )
    return replace(graph, entries=entries)


# ---------------------------------------------------------------------------
# JSON serialization

def serialize(graph: TODFlowGraph) -> bytes:
    """Canonical UTF-8 JSON bytes; deserialize(serialize(g)) round-trips."""
    acts: dict[str, Any] = {}
    for i, label in enumerate(graph.vocabulary):
        entry = graph.entries[i]
        doc: dict[str, Any] = {
            "can_shdnt": entry.can_shdnt.to_payload(),
            "shd": entry.shd.to_payload(),
        }
        if entry.can_only is not None:
            doc["can_only"] = entry.can_only.to_payload()
        acts[label] = doc
    document = {
        "version": GRAPH_VERSION,
        "domain": str(graph.metadata.get("domain_id", "")),
        "vocabulary": graph.vocabulary.to_list(),
        "acts": acts,
        "metadata": {k: graph.metadata[k] for k in sorted(graph.metadata)},
    }
    return (json.dumps(document, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def _expect(condition: bool, message: str, pointer: str) -> None:
    if not condition:
        raise GraphFormatError(message, pointer=pointer)


def _condition_at(payload: object, pointer: str, n_acts: int) -> DNFCondition:
    try:
        cond = DNFCondition.from_payload(payload)
    except ValueError as exc:
        raise GraphFormatError(str(exc), pointer=pointer)
    if cond.max_index() >= n_acts:
        raise GraphFormatError(
            f"literal index {cond.max_index()} out of range for {n_acts} acts",
            pointer=pointer,
        )
    return cond


def deserialize(data: bytes | str) -> TODFlowGraph:
    """Parse serialized graph JSON; raises GraphFormatError with a JSON
    pointer to the offending location."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"invalid JSON: {exc.msg}", pointer="")
    _expect(isinstance(doc, dict), "graph document must be an object", "")
    _expect(doc.get("version") == GRAPH_VERSION, "unsupported version", "/version")
    vocab_raw = doc.get("vocabulary")
    _expect(
        isinstance(vocab_raw, list) and all(isinstance(v, str) for v in vocab_raw),
        "vocabulary must be a list of strings",
        "/vocabulary",
    )
    try:
        vocabulary = ActVocabulary(tuple(vocab_raw))
    except Exception as exc:
        raise GraphFormatError(str(exc), pointer="/vocabulary")
    n = len(vocabulary)
    acts = doc.get("acts", {})
    _expect(isinstance(acts, dict), "acts must be an object", "/acts")
    entries = [ActEntry() for _ in range(n)]
    for label, entry_doc in acts.items():
        _expect(label in vocabulary, f"act label not in vocabulary: {label!r}", f"/acts/{label}")
        _expect(
            isinstance(entry_doc, dict),
            "act entry must be an object",
            f"/acts/{label}",
        )
        idx = vocabulary.index_of(label)
        can_shdnt = DNFCondition.true()
        shd = DNFCondition.false()
        can_only = None
        if "can_shdnt" in entry_doc:
            can_shdnt = _condition_at(entry_doc["can_shdnt"], f"/acts/{label}/can_shdnt", n)
        if "shd" in entry_doc:
            shd = _condition_at(entry_doc["shd"], f"/acts/{label}/shd", n)
        if "can_only" in entry_doc:
            can_only = _condition_at(entry_doc["can_only"], f"/acts/{label}/can_only", n)
        entries[idx] = ActEntry(can_shdnt=can_shdnt, shd=shd, can_only=can_only)
    metadata = doc.get("metadata", {})
    _expect(isinstance(metadata, dict), "metadata must be an object", "/metadata")
    metadata = dict(metadata)
    if doc.get("domain") and "domain_id" not in metadata:
        metadata["domain_id"] = doc["domain"]
    return TODFlowGraph(vocabulary=vocabulary, entries=tuple(entries), metadata=metadata)


# ---------------------------------------------------------------------------
# DOT export

def _quote(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(
    graph: TODFlowGraph,
    include_shd: bool = True,
    include_negative_edges: bool = True,
    acts: Iterable[int | str] | None = None,
) -> str:
    """Render the graph as deterministic graphviz DOT text.

    Each DNF clause becomes one AND node feeding its act; negative literals
    draw dashed edges, soft-obligation (shd) structure draws blue. The acts
    filter restricts which acts' conditions are drawn; source acts referenced
    by literals always appear.
    """
    vocab = graph.vocabulary
    if acts is None:
        selected = set(range(len(vocab)))
    else:
        selected = set()
        for a in acts:
            selected.add(vocab.index_of(a) if isinstance(a, str) else int(a))
    lines = [
        "digraph todflow_graph {",
        "  rankdir=LR;",
        '  node [fontname="Helvetica"];',
    ]
    referenced: set[int] = set(selected)
    for idx in sorted(selected):
        conds = [graph.entries[idx].can_shdnt]
        if include_shd:
            conds.append(graph.entries[idx].shd)
        for cond in conds:
            if not cond.is_constant:
                referenced.update(l.act_index for c in cond.clauses for l in c)
    for idx in sorted(referenced):
        lines.append(f"  {_quote(vocab.label_of(idx))} [shape=box];")

    def emit_condition(idx: int, cond: DNFCondition, kind: str) -> None:
        if cond.is_constant:
            return
        color = ' color="blue"' if kind == "shd" else ""
        for k, clause in enumerate(cond.clauses):
            and_id = f"{kind}_and_{idx}_{k}"
            lines.append(
                f'  {and_id} [label="&", shape=square, style=filled, fillcolor="lightgray"];'
            )
            for lit in sorted(clause):
                if not lit.positive and not include_negative_edges:
                    continue
                attrs = []
                if not lit.positive:
                    attrs.append('style="dashed"')
                if kind == "shd":
                    attrs.append('color="blue"')
                suffix = f" [{', '.join(attrs)}]" if attrs else ""
                lines.append(
                    f"  {_quote(vocab.label_of(lit.act_index))} -> {and_id}{suffix};"
                )
            lines.append(f"  {and_id} -> {_quote(vocab.label_of(idx))}{f' [{color.strip()}]' if color else ''};")

    for idx in sorted(selected):
        emit_condition(idx, graph.entries[idx].can_shdnt, "can")
        if include_shd:
            emit_condition(idx, graph.entries[idx].shd, "shd")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Edits

@dataclass(frozen=True)
class GraphEdit:
    """One structural edit: replace a condition, or add/remove one clause."""

    op: str
    act: int
    target: str
    condition: DNFCondition | None = None
    clause: frozenset | None = None

    def __post_init__(self) -> None:
        if self.op not in EDIT_OPS:
            raise EditError(f"unknown edit op {self.op!r}")
        if self.target not in EDIT_TARGETS:
            raise EditError(f"edit target must be one of {EDIT_TARGETS}, got {self.target!r}")
        if self.op == EDIT_SET_CONDITION and self.condition is None:
            raise EditError("set_condition requires a condition")
        if self.op in (EDIT_ADD_CLAUSE, EDIT_REMOVE_CLAUSE):
            if self.clause is None:
                raise EditError(f"{self.op} requires a clause")
            object.__setattr__(self, "clause", frozenset(self.clause))


def apply_edit(graph: TODFlowGraph, edit: GraphEdit) -> TODFlowGraph:
    """Return a new graph with the edit applied. Raises EditError on a
    missing act, bad indices, or removing a clause that is not present."""
    n = len(graph.vocabulary)
    if not 0 <= edit.act < n:
        raise EditError(f"act index {edit.act} out of range for {n} acts")
    entry = graph.entries[edit.act]
    current: DNFCondition = getattr(entry, edit.target)

    if edit.op == EDIT_SET_CONDITION:
        new = edit.condition
        if new.max_index() >= n:
            raise EditError(
                f"condition references index {new.max_index()} outside the vocabulary"
            )
    elif edit.op == EDIT_ADD_CLAUSE:
        clause = edit.clause
        if any(l.act_index >= n for l in clause):
            raise EditError("clause references an index outside the vocabulary")
        new = DNFCondition(current.clauses + (clause,))
    else:  # remove_clause
        normalized = DNFCondition((edit.clause,))
        if normalized.is_false:
            raise EditError("cannot remove a contradictory clause")
        target_clause = normalized.clauses[0]
        if target_clause not in current.clauses:
            raise EditError(
                f"clause not present in {edit.target} of act {edit.act}"
            )
        remaining = tuple(c for c in current.clauses if c != target_clause)
        new = DNFCondition(remaining)

    return graph.with_entry(edit.act, replace(entry, **{edit.target: new}))


def _resolve_index(raw, vocabulary: ActVocabulary, what: str) -> int:
    if isinstance(raw, str):
        return vocabulary.index_of(raw)
    if isinstance(raw, int) and not isinstance(raw, bool):
        return raw
    raise EditError(f"{what} must be an act label or index, got {raw!r}")


def _resolve_literals(payload, vocabulary: ActVocabulary):
    """Rewrite literal objects so 'i'/'act' may be a label or an index."""
    if not isinstance(payload, (list, tuple)):
        return payload
    out = []
    for lit in payload:
        if isinstance(lit, Mapping) and ("i" in lit or "act" in lit):
            raw = lit["i"] if "i" in lit else lit["act"]
            out.append(
                {
                    "i": _resolve_index(raw, vocabulary, "literal act"),
                    "neg": bool(lit.get("neg", False)),
                }
            )
        else:
            out.append(lit)
    return out


def parse_edit(obj: Mapping, vocabulary: ActVocabulary) -> GraphEdit:
    """Build a GraphEdit from a JSON object; acts may be labels or indices."""
    if not isinstance(obj, Mapping) or "op" not in obj:
        raise EditError("edit must be an object with an 'op' field")
    act = _resolve_index(obj.get("act"), vocabulary, "edit 'act'")
    target = obj.get("target", "can_shdnt")
    condition = None
    clause = None
    if "condition" in obj:
        payload = obj["condition"]
        if isinstance(payload, (list, tuple)):
            payload = [_resolve_literals(cl, vocabulary) for cl in payload]
        try:
            condition = DNFCondition.from_payload(payload)
        except ValueError as exc:
            raise EditError(f"bad condition payload: {exc}")
    if "clause" in obj:
        try:
            parsed = DNFCondition.from_payload(
                [_resolve_literals(obj["clause"], vocabulary)]
            )
        except ValueError as exc:
            raise EditError(f"bad clause payload: {exc}")
        if parsed.is_false:
            raise EditError("clause is contradictory")
        clause = parsed.clauses[0]
    return GraphEdit(
        op=obj["op"], act=act, target=target, condition=condition, clause=clause
    )


__all__ = [
    "ActEntry",
    "TODFlowGraph",
    "GraphEdit",
    "eval_condition",
    "allowed_acts",
    "should_acts",
    "obligation_view",
    "serialize",
    "deserialize",
    "to_dot",
    "apply_edit",
    "parse_edit",
    "Literal",
    "DNFCondition",
]
