"""Corpus ingestion: trajectory files in and supervised examples out.

Two input formats are supported. The native format is JSONL with one
trajectory object per line:

    {"domain": "rental", "id": "d0001", "turns": [
        {"speaker": "user", "acts": ["USER inform intent"], "utterance": "..."},
        {"speaker": "system", "acts": ["SYSTEM query FindCar"]},
        {"speaker": "db", "acts": [], "db_result": "query_success"},
        ...]}

The schema-guided dialogue export format ("sgd") is a JSON array of annotated
dialogues; sgd_adapt flattens frame actions into "<SPEAKER> <act> <slot>"
labels and, when a turn carries a service call, inserts a "SYSTEM query
<method>" turn followed by a db turn whose db_result is query_success or
query_failure depending on whether any results came back.

Example construction: c_0 is all zeros and c_t = c_{t-1} OR a_{t-1} OR
{d_{t-1}}, i.e. the completion entering turn t contains everything performed
or returned strictly before turn t. Because turns are speaker-granular, the
completion at a system turn already includes the same exchange's user acts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import (
    SPEAKER_DB,
    SPEAKER_SYSTEM,
    SPEAKER_USER,
    ActVocabulary,
    CompletionVector,
    GraphExample,
    Trajectory,
    TurnRecord,
    normalize_label,
)
from .errors import EmptyCorpusError, ParseError, SchemaError, VocabularyError

FORMAT_JSONL = "jsonl"
FORMAT_SGD = "sgd"

TARGET_USER = "user"
TARGET_SYSTEM = "system"
TARGET_BOTH = "both"
TARGETS = (TARGET_USER, TARGET_SYSTEM, TARGET_BOTH)

DB_SUCCESS = "query_success"
DB_FAILURE = "query_failure"


@dataclass(frozen=True)
class CorpusFile:
    """A corpus path plus its declared format; format=None means sniff."""

    path: Path
    format: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", Path(self.path))
        if self.format is not None and self.format not in (FORMAT_JSONL, FORMAT_SGD):
            raise ValueError(f"unknown corpus format {self.format!r}")


def detect_format(path: Path) -> str:
    """Sniff by leading character: a JSON array is an sgd export, anything
    else is treated as JSONL."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            stripped = line.lstrip()
            if stripped:
                return FORMAT_SGD if stripped[0] == "[" else FORMAT_JSONL
    raise ParseError("empty corpus file", path=str(path))


# ---------------------------------------------------------------------------
# JSON object <-> record conversion (shared by files and the wire protocol)

def turn_to_obj(turn: TurnRecord) -> dict:
    obj: dict[str, Any] = {"speaker": turn.speaker, "acts": list(turn.acts)}
    if turn.utterance is not None:
        obj["utterance"] = turn.utterance
    if turn.db_result is not None:
        obj["db_result"] = turn.db_result
    return obj


def obj_to_turn(obj: Mapping) -> TurnRecord:
    if not isinstance(obj, Mapping):
        raise SchemaError("turn must be an object", field="turns")
    if "speaker" not in obj:
        raise SchemaError("turn is missing required field", field="speaker")
    if "acts" not in obj:
        raise SchemaError("turn is missing required field", field="acts")
    speaker = obj["speaker"]
    acts = obj["acts"]
    if not isinstance(acts, list) or not all(isinstance(a, str) for a in acts):
        raise SchemaError("acts must be a list of strings", field="acts")
    utterance = obj.get("utterance")
    if utterance is not None and not isinstance(utterance, str):
        raise SchemaError("utterance must be a string", field="utterance")
    db_result = obj.get("db_result")
    if db_result is not None and not isinstance(db_result, str):
        raise SchemaError("db_result must be a string", field="db_result")
    try:
        return TurnRecord(
            speaker=speaker, acts=tuple(acts), utterance=utterance, db_result=db_result
        )
    except ValueError as exc:
        raise SchemaError(str(exc), field="speaker" if "speaker" in str(exc) else "db_result")


def trajectory_to_obj(traj: Trajectory) -> dict:
    obj: dict[str, Any] = {"domain": traj.domain_id}
    if traj.traj_id is not None:
        obj["id"] = traj.traj_id
    obj["turns"] = [turn_to_obj(t) for t in traj.turns]
    if traj.meta:
        obj["meta"] = dict(traj.meta)
    return obj


def obj_to_trajectory(obj: Mapping) -> Trajectory:
    if not isinstance(obj, Mapping):
        raise SchemaError("trajectory must be an object", field="")
    if "domain" not in obj:
        raise SchemaError("trajectory is missing required field", field="domain")
    if not isinstance(obj["domain"], str) or not obj["domain"]:
        raise SchemaError("domain must be a non-empty string", field="domain")
    if "turns" not in obj:
        raise SchemaError("trajectory is missing required field", field="turns")
    if not isinstance(obj["turns"], list) or not obj["turns"]:
        raise SchemaError("turns must be a non-empty list", field="turns")
    traj_id = obj.get("id")
    if traj_id is not None and not isinstance(traj_id, str):
        raise SchemaError("id must be a string", field="id")
    meta = obj.get("meta")
    if meta is not None and not isinstance(meta, Mapping):
        raise SchemaError("meta must be an object", field="meta")
    turns = tuple(obj_to_turn(t) for t in obj["turns"])
    return Trajectory(domain_id=obj["domain"], turns=turns, traj_id=traj_id, meta=meta)


# ---------------------------------------------------------------------------
# Parsing

def parse_trajectories(
    source: CorpusFile | str | Path, format: str | None = None
) -> list[Trajectory]:
    """Parse a corpus file into trajectories.

    Raises ParseError (with line number for JSONL) on undecodable input,
    SchemaError naming the offending field on invalid records, and ParseError
    on an empty file. Unknown fields are ignored.
    """
    if not isinstance(source, CorpusFile):
        source = CorpusFile(Path(source), format)
    elif format is not None:
        source = CorpusFile(source.path, format)
    fmt = source.format or detect_format(source.path)
    if fmt == FORMAT_SGD:
        return _parse_sgd(source.path)
    return _parse_jsonl(source.path)


def _parse_jsonl(path: Path) -> list[Trajectory]:
    trajectories: list[Trajectory] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, path=str(path))
            trajectories.append(obj_to_trajectory(obj))
    if not trajectories:
        raise ParseError("empty corpus file", path=str(path))
    return trajectories


def _parse_sgd(path: Path) -> list[Trajectory]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path))
    if not isinstance(doc, list):
        raise ParseError("sgd corpus must be a JSON array of dialogues", path=str(path))
    if not doc:
        raise ParseError("empty corpus file", path=str(path))
    return [sgd_adapt(dialogue) for dialogue in doc]


def sgd_adapt(raw: Mapping) -> Trajectory:
    """Flatten one schema-guided dialogue into a Trajectory.

    Act labels become "<SPEAKER> <act> <slot>" with the act lower-cased and
    the slot omitted when absent. A system turn whose frame carries a
    service_call contributes, before the response turn itself, a synthetic
    "SYSTEM query <method>" turn and a db turn with db_result query_success
    (any results) or query_failure (none).
    """
    if not isinstance(raw, Mapping):
        raise SchemaError("dialogue must be an object", field="")
    dialogue_id = raw.get("dialogue_id")
    services = raw.get("services")
    if not isinstance(services, list) or not services:
        raise SchemaError("dialogue is missing its services list", field="services")
    domain = "+".join(str(s) for s in services)
    if "turns" not in raw or not isinstance(raw["turns"], list) or not raw["turns"]:
        raise SchemaError("dialogue has no turns", field="turns")

    records: list[TurnRecord] = []
    for ti, turn in enumerate(raw["turns"]):
        if not isinstance(turn, Mapping) or "speaker" not in turn:
            raise SchemaError(f"turn {ti} is missing its speaker", field="speaker")
        speaker_raw = str(turn["speaker"]).upper()
        if speaker_raw not in ("USER", "SYSTEM"):
            raise SchemaError(
                f"turn {ti} has unsupported speaker {turn['speaker']!r}", field="speaker"
            )
        frames = turn.get("frames")
        if not isinstance(frames, list) or not frames:
            raise SchemaError(f"turn {ti} is unannotated (no frames)", field="frames")
        labels: list[str] = []
        call = None
        results = None
        for frame in frames:
            if not isinstance(frame, Mapping):
                raise SchemaError(f"turn {ti} has a malformed frame", field="frames")
            actions = frame.get("actions")
            if actions is None:
                raise SchemaError(
                    f"turn {ti} is unannotated (frame without actions)", field="actions"
                )
            for action in actions:
                act = action.get("act")
                if not act:
                    raise SchemaError(f"turn {ti} has an action without an act", field="act")
                slot = action.get("slot") or ""
                label = f"{speaker_raw} {str(act).lower()}"
                if slot:
                    label += f" {slot}"
                labels.append(normalize_label(label))
            if call is None and frame.get("service_call") is not None:
                call = frame["service_call"]
                results = frame.get("service_results")
        if speaker_raw == "SYSTEM" and call is not None:
            method = call.get("method") if isinstance(call, Mapping) else None
            if not method:
                raise SchemaError(
                    f"turn {ti} has a service_call without a method", field="service_call"
                )
            records.append(
                TurnRecord(speaker=SPEAKER_SYSTEM, acts=(f"SYSTEM query {method}",))
            )
            ok = isinstance(results, list) and len(results) > 0
            records.append(
                TurnRecord(
                    speaker=SPEAKER_DB,
                    acts=(),
                    db_result=DB_SUCCESS if ok else DB_FAILURE,
                )
            )
        records.append(
            TurnRecord(
                speaker=SPEAKER_USER if speaker_raw == "USER" else SPEAKER_SYSTEM,
                acts=tuple(labels),
                utterance=turn.get("utterance") if isinstance(turn.get("utterance"), str) else None,
            )
        )
    return Trajectory(
        domain_id=domain,
        turns=tuple(records),
        traj_id=str(dialogue_id) if dialogue_id is not None else None,
    )


def apply_rewrites(
    trajectories: Iterable[Trajectory], mapping: Mapping[str, Sequence[str]]
) -> list[Trajectory]:
    """Rewrite act labels post-hoc: each key label is replaced by one or more
    labels (splitting coupled annotations into separate acts)."""
    table = {normalize_label(k): tuple(v) for k, v in mapping.items()}
    out = []
    for traj in trajectories:
        turns = []
        for turn in traj.turns:
            acts: list[str] = []
            for label in turn.acts:
                acts.extend(table.get(label, (label,)))
            turns.append(
                TurnRecord(
                    speaker=turn.speaker,
                    acts=tuple(acts),
                    utterance=turn.utterance,
                    db_result=turn.db_result,
                )
            )
        out.append(
            Trajectory(
                domain_id=traj.domain_id,
                turns=tuple(turns),
                traj_id=traj.traj_id,
                meta=traj.meta,
            )
        )
    return out


def write_trajectories_jsonl(path: Path | str, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(trajectory_to_obj(traj), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Example construction

def iter_turn_contexts(
    traj: Trajectory, vocabulary: ActVocabulary
) -> Iterator[tuple[int, TurnRecord, CompletionVector]]:
    """Yield (turn_index, turn, completion entering the turn) in order.

    The completion after the turn folds in the turn's acts and db_result.
    Raises VocabularyError naming the first unknown label.
    """
    n = len(vocabulary)
    completion = CompletionVector.zeros(n)
    for t, turn in enumerate(traj.turns):
        yield t, turn, completion
        advance = [vocabulary.index_of(label) for label in turn.acts]
        if turn.db_result is not None:
            advance.append(vocabulary.index_of(turn.db_result))
        if advance:
            completion = completion.with_indices(advance)


def _default_traj_id(traj: Trajectory, position: int) -> str:
    return traj.traj_id if traj.traj_id is not None else f"traj-{position:05d}"


@dataclass(frozen=True)
class ExampleDataset:
    """Immutable example collection plus cached dense matrices for learning."""

    vocabulary: ActVocabulary
    examples: tuple[GraphExample, ...]
    target: str = TARGET_BOTH
    split: str = "train"
    _cmat: Any = field(init=False, repr=False, compare=False, default=None)
    _amat: Any = field(init=False, repr=False, compare=False, default=None)

    def __len__(self) -> int:
        return len(self.examples)

    def completion_matrix(self) -> np.ndarray:
        """[n_examples, n_acts] boolean completion matrix (cached)."""
        if self._cmat is None:
            mat = np.array(
                [ex.completion.bits for ex in self.examples], dtype=bool
            ).reshape(len(self.examples), len(self.vocabulary))
            mat.flags.writeable = False
            object.__setattr__(self, "_cmat", mat)
        return self._cmat

    def action_matrix(self) -> np.ndarray:
        """[n_examples, n_acts] boolean performed-act matrix (cached)."""
        if self._amat is None:
            mat = np.zeros((len(self.examples), len(self.vocabulary)), dtype=bool)
            for row, ex in enumerate(self.examples):
                for i in ex.action:
                    mat[row, i] = True
            mat.flags.writeable = False
            object.__setattr__(self, "_amat", mat)
        return self._amat

    def act_column(self, act: int) -> np.ndarray:
        return self.action_matrix()[:, act]

    def fingerprint(self) -> str:
        """Stable content hash of the examples and vocabulary."""
        h = hashlib.sha256()
        h.update("\x1f".join(self.vocabulary.labels).encode("utf-8"))
        for ex in self.examples:
            h.update(ex.trajectory_id.encode("utf-8"))
            h.update(ex.turn_index.to_bytes(4, "big"))
            h.update(bytes(ex.completion.bits))
            h.update(",".join(map(str, sorted(ex.action))).encode("ascii"))
        return h.hexdigest()


def build_examples(
    trajectories: Sequence[Trajectory],
    vocabulary: ActVocabulary,
    target_speaker: str = TARGET_BOTH,
    split: str = "train",
) -> ExampleDataset:
    """Derive graph-inference examples from trajectories.

    target_speaker selects which turns become examples: "user" and "system"
    emit one example per turn of that speaker, "both" emits one example per
    turn of any speaker (db turns contribute empty action sets). Completion
    accumulation always walks every turn, so a system-turn example's context
    includes the acts of the user turn(s) that precede it.
    """
    if target_speaker not in TARGETS:
        raise ValueError(f"target_speaker must be one of {TARGETS}")
    if not trajectories:
        raise EmptyCorpusError("no trajectories given")
    examples: list[GraphExample] = []
    for pos, traj in enumerate(trajectories):
        traj_id = _default_traj_id(traj, pos)
        for t, turn, completion in iter_turn_contexts(traj, vocabulary):
            if target_speaker != TARGET_BOTH and turn.speaker != target_speaker:
                continue
            examples.append(
                GraphExample(
                    completion=completion,
                    action=vocabulary.encode(turn.acts),
                    turn_index=t,
                    trajectory_id=traj_id,
                )
            )
    return ExampleDataset(
        vocabulary=vocabulary,
        examples=tuple(examples),
        target=target_speaker,
        split=split,
    )


def act_roles(
    trajectories: Sequence[Trajectory], vocabulary: ActVocabulary
) -> tuple[str, ...]:
    """Infer each act label's speaker role from where it occurs.

    Act labels take the speaker of the first turn that performs them;
    db_result labels are "db". Labels never seen get "unseen" (an explicit
    vocabulary may be wider than the corpus).
    """
    roles: dict[int, str] = {}
    for traj in trajectories:
        for turn in traj.turns:
            for label in turn.acts:
                roles.setdefault(vocabulary.index_of(label), turn.speaker)
            if turn.db_result is not None:
                roles.setdefault(vocabulary.index_of(turn.db_result), SPEAKER_DB)
    return tuple(roles.get(i, "unseen") for i in range(len(vocabulary)))


def split_trajectories(
    trajectories: Sequence[Trajectory],
    ratio: float = 0.9,
    seed: int = 0,
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Deterministic train/test split by seeded trajectory hash, per domain.

    A trajectory goes to train iff the top 8 bytes of
    sha256("{seed}\\x00{domain}\\x00{traj_id}") fall below ratio * 2^64, so
    membership is stable under corpus reordering and extension.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be within [0, 1]")
    train: list[Trajectory] = []
    test: list[Trajectory] = []
    bound = ratio * 2.0**64
    for pos, traj in enumerate(trajectories):
        key = f"{seed}\x00{traj.domain_id}\x00{_default_traj_id(traj, pos)}"
        top = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")
        (train if top < bound else test).append(traj)
    return train, test
