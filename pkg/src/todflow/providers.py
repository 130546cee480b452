"""Candidate providers: sources of k candidate act sets (or annotated
responses) per turn.

Three implementations: replay from a recorded file, a seeded noisy oracle
over synthetic ground truth, and an external child process speaking
newline-delimited JSON (protocol v1) over stdin/stdout.
"""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from queue import Empty, Queue
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ActionSet,
    ActVocabulary,
    CompletionVector,
    Trajectory,
    TurnRecord,
)
from .condition import Candidate, ResponseCandidate
from .errors import (
    MissingCandidatesError,
    ParseError,
    ProtocolError,
    ProviderSpawnError,
    ProviderTimeoutError,
)
from .ingest import act_roles, turn_to_obj

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MODE_ACTS = "acts"
MODE_RESPONSES = "responses"
MODES = (MODE_ACTS, MODE_RESPONSES)


@dataclass(frozen=True)
class ProviderRequest:
    """One turn's worth of context sent to a provider."""

    domain_id: str
    history: tuple[TurnRecord, ...]
    completion: CompletionVector
    k: int
    mode: str = MODE_ACTS
    trajectory_id: str | None = None
    turn_index: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class ProviderReply:
    """Ordered candidates; position is the preference rank."""

    candidates: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        for i, cand in enumerate(self.candidates):
            if cand.provider_rank != i:
                raise ValueError(
                    f"candidate at position {i} has provider_rank "
                    f"{cand.provider_rank}; ranks must be 0..n-1 in order"
                )


class Provider:
    """Interface: candidates(request) -> ProviderReply, plus close()."""

    def candidates(self, request: ProviderRequest) -> ProviderReply:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self) -> "Provider":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _decode_acts(
    labels: Sequence, vocabulary: ActVocabulary, source: str
) -> ActionSet:
    """Map labels to indices, dropping unknown ones with a warning."""
    known = []
    for label in labels:
        if not isinstance(label, str):
            raise ProtocolError(f"{source}: act labels must be strings, got {label!r}")
        if label in vocabulary:
            known.append(vocabulary.index_of(label))
        else:
            log.warning("%s: dropping unknown act label %r", source, label)
    return frozenset(known)


def _candidate_from_obj(
    obj: Mapping,
    rank: int,
    mode: str,
    vocabulary: ActVocabulary,
    source: str,
):
    if not isinstance(obj, Mapping):
        raise ProtocolError(f"{source}: candidate must be an object, got {type(obj).__name__}")
    acts_raw = obj.get("acts")
    if not isinstance(acts_raw, list):
        raise ProtocolError(f"{source}: candidate 'acts' must be a list")
    acts = _decode_acts(acts_raw, vocabulary, source)
    if mode == MODE_RESPONSES:
        text = obj.get("text", "")
        if not isinstance(text, str):
            raise ProtocolError(f"{source}: candidate 'text' must be a string")
        return ResponseCandidate(text=text, acts=acts, provider_rank=rank)
    score = obj.get("score")
    if score is not None and not isinstance(score, (int, float)):
        raise ProtocolError(f"{source}: candidate 'score' must be a number")
    return Candidate(
        acts=acts,
        provider_rank=rank,
        provider_score=float(score) if score is not None else None,
    )


# ---------------------------------------------------------------------------
# Replay

class ReplayProvider(Provider):
    """Serve candidates recorded ahead of time, keyed by (trajectory, turn).

    File format: JSONL, one object per line:
    {"traj": str, "turn": int, "candidates": [{"acts": [...], ...}]}
    """

    def __init__(self, source, vocabulary: ActVocabulary):
        self.vocabulary = vocabulary
        self._store: dict[tuple[str, int], list] = {}
        if isinstance(source, (str, Path)):
            text = Path(source).read_text(encoding="utf-8")
            for lineno, line in enumerate(text.splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(
                        f"invalid JSON in replay file: {exc.msg}",
                        line=lineno,
                        path=str(source),
                    )
                self._add(obj, f"replay line {lineno}")
        else:
            for pos, obj in enumerate(source):
                self._add(obj, f"replay entry {pos}")

    def _add(self, obj: Mapping, where: str) -> None:
        if not isinstance(obj, Mapping):
            raise ParseError(f"{where}: replay entry must be an object")
        traj = obj.get("traj")
        turn = obj.get("turn")
        cands = obj.get("candidates")
        if not isinstance(traj, str) or not isinstance(turn, int) or isinstance(turn, bool):
            raise ParseError(f"{where}: need string 'traj' and integer 'turn'")
        if not isinstance(cands, list):
            raise ParseError(f"{where}: 'candidates' must be a list")
        self._store[(traj, turn)] = cands

    def candidates(self, request: ProviderRequest) -> ProviderReply:
        key = (request.trajectory_id, request.turn_index)
        if key not in self._store:
            raise MissingCandidatesError(
                f"no recorded candidates for trajectory {request.trajectory_id!r} "
                f"turn {request.turn_index}"
            )
        stored = self._store[key][: request.k]
        source = f"replay {request.trajectory_id!r}#{request.turn_index}"
        return ProviderReply(
            candidates=tuple(
                _candidate_from_obj(obj, rank, request.mode, self.vocabulary, source)
                for rank, obj in enumerate(stored)
            )
        )


def replay_provider(source, vocabulary: ActVocabulary) -> ReplayProvider:
    return ReplayProvider(source, vocabulary)


# ---------------------------------------------------------------------------
# Noisy oracle

@dataclass(frozen=True)
class NoisyOracleConfig:
    """Perturbation knobs for the synthetic stand-in base policy."""

    dropout_p: float = 0.0
    spurious_p: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("dropout_p", "spurious_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


def _traj_key(traj_id: str) -> int:
    digest = hashlib.sha256(traj_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class NoisyOracleProvider(Provider):
    """Ground truth plus independent noise, emulating an imperfect base
    policy at temperature 1: each candidate is an IID perturbed copy of the
    turn's true act set, listed in sampling order.

    Per true act: dropped with dropout_p. Per other act of the same
    speaker's pool: inserted with spurious_p / pool_size, keeping the
    expected spurious count near spurious_p regardless of vocabulary size.
    Fully seeded per (trajectory, turn): reruns and shared callers see
    identical candidate lists.
    """

    def __init__(
        self,
        trajectories: Sequence[Trajectory],
        vocabulary: ActVocabulary,
        cfg: NoisyOracleConfig,
    ):
        self.vocabulary = vocabulary
        self.cfg = cfg
        self._turns: dict[tuple[str, int], TurnRecord] = {}
        for pos, traj in enumerate(trajectories):
            traj_id = traj.traj_id if traj.traj_id is not None else f"traj-{pos:05d}"
            for t, turn in enumerate(traj.turns):
                self._turns[(traj_id, t)] = turn
        roles = act_roles(trajectories, vocabulary)
        self._pools: dict[str, tuple[int, ...]] = {}
        for speaker in ("user", "system", "db"):
            self._pools[speaker] = tuple(
                i for i, r in enumerate(roles) if r == speaker
            )

    def candidates(self, request: ProviderRequest) -> ProviderReply:
        key = (request.trajectory_id, request.turn_index)
        if key not in self._turns:
            raise MissingCandidatesError(
                f"oracle has no turn for trajectory {request.trajectory_id!r} "
                f"index {request.turn_index}"
            )
        turn = self._turns[key]
        true_acts = sorted(self.vocabulary.encode(turn.acts))
        pool = self._pools.get(turn.speaker, ())
        rng = np.random.Generator(
            np.random.PCG64(
                np.random.SeedSequence(
                    [self.cfg.seed, _traj_key(request.trajectory_id), request.turn_index]
                )
            )
        )
        insert_p = self.cfg.spurious_p / len(pool) if pool else 0.0
        out = []
        for rank in range(request.k):
            acts = set()
            for act in true_acts:
                if rng.random() >= self.cfg.dropout_p:
                    acts.add(act)
            for act in pool:
                if act in true_acts:
                    continue
                if rng.random() < insert_p:
                    acts.add(act)
            out.append(Candidate(acts=frozenset(acts), provider_rank=rank))
        return ProviderReply(candidates=tuple(out))


def noisy_oracle_provider(
    trajectories: Sequence[Trajectory],
    vocabulary: ActVocabulary,
    cfg: NoisyOracleConfig,
) -> NoisyOracleProvider:
    return NoisyOracleProvider(trajectories, vocabulary, cfg)


# ---------------------------------------------------------------------------
# External process

def _pump_lines(stream, queue: Queue) -> None:
    try:
        for line in iter(stream.readline, b""):
            queue.put(line)
    except ValueError:
        pass  # stream closed under us during shutdown
    finally:
        queue.put(None)


def _pump_stderr(stream, sink: deque) -> None:
    try:
        for line in iter(stream.readline, b""):
            sink.append(line.decode("utf-8", errors="replace").rstrip("\n"))
    except ValueError:
        pass


class ExternalProvider(Provider):
    """Child process speaking protocol v1: one JSON request per line on its
    stdin, one JSON reply per line on its stdout, strictly in order."""

    def __init__(
        self,
        command: Sequence[str],
        vocabulary: ActVocabulary,
        timeout: float = 30.0,
    ):
        self.vocabulary = vocabulary
        self.timeout = timeout
        self._next_id = 0
        self._stderr_tail: deque = deque(maxlen=50)
        try:
            self._proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
        except OSError as exc:
            raise ProviderSpawnError(f"cannot spawn provider {command!r}: {exc}")
        self._lines: Queue = Queue()
        self._reader = threading.Thread(
            target=_pump_lines, args=(self._proc.stdout, self._lines), daemon=True
        )
        self._reader.start()
        self._err_reader = threading.Thread(
            target=_pump_stderr, args=(self._proc.stderr, self._stderr_tail), daemon=True
        )
        self._err_reader.start()

    def _stderr_suffix(self) -> str:
        if not self._stderr_tail:
            return ""
        return " | provider stderr: " + " / ".join(list(self._stderr_tail)[-5:])

    def candidates(self, request: ProviderRequest) -> ProviderReply:
        req_id = self._next_id
        self._next_id += 1
        doc = {
            "v": PROTOCOL_VERSION,
            "id": req_id,
            "domain": request.domain_id,
            "k": request.k,
            "mode": request.mode,
            "history": [turn_to_obj(t) for t in request.history],
            "completion": request.completion.as_labels(self.vocabulary),
        }
        payload = (json.dumps(doc, ensure_ascii=False) + "\n").encode("utf-8")
        if self._proc.poll() is not None:
            raise ProviderSpawnError(
                f"provider exited with code {self._proc.returncode} before request"
                + self._stderr_suffix()
            )
        try:
            self._proc.stdin.write(payload)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ProviderSpawnError(
                "provider closed stdin" + self._stderr_suffix()
            )
        try:
            line = self._lines.get(timeout=self.timeout)
        except Empty:
            raise ProviderTimeoutError(
                f"no reply within {self.timeout}s for request {req_id}"
            )
        if line is None:
            raise ProviderSpawnError(
                f"provider exited mid-request (code {self._proc.poll()})"
                + self._stderr_suffix()
            )
        try:
            reply = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"malformed reply line: {exc}")
        if not isinstance(reply, dict):
            raise ProtocolError("reply must be a JSON object")
        if reply.get("v") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported reply version {reply.get('v')!r}")
        if reply.get("id") != req_id:
            raise ProtocolError(
                f"out-of-order reply: expected id {req_id}, got {reply.get('id')!r}"
            )
        cands = reply.get("candidates")
        if not isinstance(cands, list):
            raise ProtocolError("reply 'candidates' must be a list")
        if len(cands) > request.k:
            raise ProtocolError(
                f"reply has {len(cands)} candidates, more than k={request.k}"
            )
        source = f"reply {req_id}"
        return ProviderReply(
            candidates=tuple(
                _candidate_from_obj(obj, rank, request.mode, self.vocabulary, source)
                for rank, obj in enumerate(cands)
            )
        )

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.terminate()
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()


def external_provider(
    command: Sequence[str], vocabulary: ActVocabulary, timeout: float = 30.0
) -> ExternalProvider:
    return ExternalProvider(command, vocabulary, timeout)


__all__ = [
    "PROTOCOL_VERSION",
    "MODE_ACTS",
    "MODE_RESPONSES",
    "ProviderRequest",
    "ProviderReply",
    "Provider",
    "ReplayProvider",
    "replay_provider",
    "NoisyOracleConfig",
    "NoisyOracleProvider",
    "noisy_oracle_provider",
    "ExternalProvider",
    "external_provider",
]
