"""Synthetic domains with known ground-truth graphs, plus a compliant
dialogue simulator.

The generator draws layered random conditions (act i's conditions reference
only lower-indexed acts, optionally plus its own negation) and keeps only
graphs where every act is executable in practice, verified by breadth-first
reachability and a pilot simulation. The simulator alternates roles,
executes every fired obligation plus a random subset of the remaining
allowed acts, and optionally corrupts the RECORDED labels while the latent
state advances by what was truly executed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (
    SPEAKER_DB,
    SPEAKER_SYSTEM,
    SPEAKER_USER,
    ActVocabulary,
    Trajectory,
    TurnRecord,
)
from .dnf import DNFCondition, Literal
from .errors import SynthError
from .graph import ActEntry, TODFlowGraph

GEN_ATTEMPTS = 64
PILOT_TRAJECTORIES = 50

NEGATIVE_LITERAL_P = 0.25
SHD_SELF_NEGATION_P = 0.5


@dataclass(frozen=True)
class SynthConfig:
    n_acts: int = 8
    n_db: int = 0
    max_clause_literals: int = 3
    # One clause per condition keeps random graphs identifiable from
    # corpus-scale data; disjunctive gates hide rarely-visited branches.
    clauses_per_condition: int = 1
    shd_fraction: float = 0.3
    n_trajectories: int = 500
    max_turns: int = 32
    annotation_noise_p: float = 0.0
    exploration_p: float = 0.5
    # Acts are do-once by default: each can clause carries a negated self
    # literal, matching the one-shot texture of dialog acts.
    self_blocking_p: float = 1.0
    seed: int = 0
    domain_id: str = "synth"

    def __post_init__(self) -> None:
        if self.n_acts < 2:
            raise ValueError(f"n_acts must be >= 2, got {self.n_acts}")
        if not 0 <= self.n_db <= self.n_acts - 2:
            raise ValueError(
                f"n_db must leave at least one user and one system act, got {self.n_db}"
            )
        if not 1 <= self.max_clause_literals <= self.n_acts - 1:
            raise ValueError(
                f"max_clause_literals must lie in [1, n_acts-1], got {self.max_clause_literals}"
            )
        if self.clauses_per_condition < 1:
            raise ValueError("clauses_per_condition must be >= 1")
        for name in (
            "shd_fraction",
            "annotation_noise_p",
            "exploration_p",
            "self_blocking_p",
        ):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.n_trajectories < 1 or self.max_turns < 1:
            raise ValueError("n_trajectories and max_turns must be >= 1")

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


@dataclass(frozen=True)
class SynthDomain:
    truth_graph: TODFlowGraph
    trajectories: tuple[Trajectory, ...]


def _role_layout(cfg: SynthConfig) -> tuple[tuple[str, ...], ActVocabulary]:
    """Assign roles and labels: user acts first, then system, then db."""
    n_free = cfg.n_acts - cfg.n_db
    n_user = (n_free + 1) // 2
    n_system = n_free - n_user
    roles = (
        (SPEAKER_USER,) * n_user
        + (SPEAKER_SYSTEM,) * n_system
        + (SPEAKER_DB,) * cfg.n_db
    )
    labels = []
    counters = {SPEAKER_USER: 0, SPEAKER_SYSTEM: 0, SPEAKER_DB: 0}
    for role in roles:
        labels.append(f"{role.upper()} act{counters[role]}")
        counters[role] += 1
    return roles, ActVocabulary(tuple(labels))


def _random_clause(
    rng: np.random.Generator,
    predecessors: Sequence[int],
    max_literals: int,
    self_index: int | None,
) -> frozenset:
    # A self-blocking literal spends part of the per-clause literal budget.
    budget = max_literals - (1 if self_index is not None else 0)
    size = int(rng.integers(1, max(1, min(budget, len(predecessors))) + 1))
    picks = rng.choice(len(predecessors), size=size, replace=False)
    literals = {
        Literal(
            act_index=predecessors[int(j)],
            positive=bool(rng.random() >= NEGATIVE_LITERAL_P),
        )
        for j in picks
    }
    if self_index is not None:
        literals.add(Literal(act_index=self_index, positive=False))
    return frozenset(literals)


def _draw_graph(
    cfg: SynthConfig, roles: Sequence[str], vocab: ActVocabulary, rng: np.random.Generator
) -> TODFlowGraph:
    entries: list[ActEntry] = []
    first_of_role: dict[str, int] = {}
    for i, role in enumerate(roles):
        first_of_role.setdefault(role, i)
    for i, role in enumerate(roles):
        predecessors = list(range(i))
        self_neg = i if rng.random() < cfg.self_blocking_p else None
        if first_of_role[role] == i or not predecessors:
            if self_neg is None:
                can = DNFCondition.true()
            else:
                can = DNFCondition.single([Literal(act_index=i, positive=False)])
        else:
            n_clauses = int(rng.integers(1, cfg.clauses_per_condition + 1))
            clauses = [
                _random_clause(rng, predecessors, cfg.max_clause_literals, self_neg)
                for _ in range(n_clauses)
            ]
            can = DNFCondition(tuple(clauses))
            if can.is_constant:
                can = DNFCondition.true()
        shd = DNFCondition.false()
        if (
            role != SPEAKER_DB
            and not can.is_constant
            and rng.random() < cfg.shd_fraction
        ):
            # Build the obligation on top of one gate clause so that a fired
            # obligation is always allowed.
            base = can.clauses[int(rng.integers(0, len(can.clauses)))]
            extra = set(base)
            if self_neg is None and rng.random() < SHD_SELF_NEGATION_P:
                extra.add(Literal(act_index=i, positive=False))
            shd = DNFCondition((frozenset(extra),))
        entries.append(ActEntry(can_shdnt=can, shd=shd))
    return TODFlowGraph(
        vocabulary=vocab,
        entries=tuple(entries),
        metadata={
            "domain_id": cfg.domain_id,
            "objective_kind": "ground-truth",
            "roles": list(roles),
            "max_turns": cfg.max_turns,
            "synth_config": cfg.to_dict(),
        },
    )


# ---------------------------------------------------------------------------
# Reachability

def role_cycle(roles: Sequence[str]) -> tuple[str, ...]:
    """Turn-taking order: user, system, then db when db acts exist."""
    cycle = [SPEAKER_USER, SPEAKER_SYSTEM]
    if SPEAKER_DB in roles:
        cycle.append(SPEAKER_DB)
    return tuple(cycle)


def reachable_states(
    graph: TODFlowGraph,
    roles: Sequence[str],
    max_turns: int | None = None,
) -> frozenset[tuple[tuple[bool, ...], str]]:
    """All (completion bits, speaker-to-move) states the simulator can visit.

    Mirrors the simulator's dynamics exactly: at each state the mover
    executes every fired-and-allowed obligation plus ANY subset of its other
    allowed acts. Horizon-capped by max_turns when given.
    """
    roles = tuple(roles)
    cycle = role_cycle(roles)
    n = len(graph.vocabulary)
    by_role: dict[str, list[int]] = {}
    for i, role in enumerate(roles):
        by_role.setdefault(role, []).append(i)

    start = (tuple([False] * n), 0)
    seen_depth: dict[tuple[tuple[bool, ...], int], int] = {start: 0}
    frontier = [start]
    out: set[tuple[tuple[bool, ...], str]] = set()
    while frontier:
        (bits, cycle_pos) = frontier.pop()
        depth = seen_depth[(bits, cycle_pos)]
        speaker = cycle[cycle_pos]
        out.add((bits, speaker))
        if max_turns is not None and depth >= max_turns:
            continue
        allowed = {
            a
            for a in by_role.get(speaker, [])
            if graph.entries[a].can_shdnt.evaluate(bits)
        }
        fired = sorted(a for a in allowed if graph.entries[a].shd.evaluate(bits))
        optional = sorted(allowed - set(fired))
        executions: list[frozenset[int]]
        if speaker == SPEAKER_DB:
            # A db turn records at most one result bit; an obligated result
            # preempts exploration, mirroring the simulator.
            if fired:
                executions = [frozenset([fired[0]])]
            else:
                executions = [frozenset()] + [frozenset([a]) for a in optional]
        else:
            executions = [
                frozenset(fired)
                | {optional[j] for j in range(len(optional)) if mask >> j & 1}
                for mask in range(1 << len(optional))
            ]
        next_pos = (cycle_pos + 1) % len(cycle)
        for executed in executions:
            new_bits = list(bits)
            for a in executed:
                new_bits[a] = True
            key = (tuple(new_bits), next_pos)
            new_depth = depth + 1
            if key not in seen_depth or seen_depth[key] > new_depth:
                seen_depth[key] = new_depth
                frontier.append(key)
    return frozenset(out)


def _act_can_fire(
    graph: TODFlowGraph,
    roles: Sequence[str],
    states: frozenset,
) -> list[bool]:
    ok = []
    for i in range(len(graph.vocabulary)):
        role = roles[i]
        fire = any(
            graph.entries[i].can_shdnt.evaluate(bits)
            for bits, speaker in states
            if speaker == role
        )
        ok.append(fire)
    return ok


# ---------------------------------------------------------------------------
# Simulation

def _simulate_one(
    graph: TODFlowGraph,
    roles: Sequence[str],
    cfg: SynthConfig,
    traj_index: int,
) -> Trajectory:
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 0x5E55, traj_index]))
    )
    vocab = graph.vocabulary
    cycle = role_cycle(roles)
    by_role: dict[str, list[int]] = {}
    for i, role in enumerate(roles):
        by_role.setdefault(role, []).append(i)

    bits = [False] * len(vocab)
    turns: list[TurnRecord] = []
    noise_events = 0
    act_occurrences = 0
    terminated_early = False

    for turn_no in range(cfg.max_turns):
        speaker = cycle[turn_no % len(cycle)]
        anyone_allowed = any(
            graph.entries[a].can_shdnt.evaluate(tuple(bits))
            for a in range(len(vocab))
        )
        if not anyone_allowed:
            terminated_early = True
            break
        frozen = tuple(bits)
        allowed = [
            a for a in by_role.get(speaker, []) if graph.entries[a].can_shdnt.evaluate(frozen)
        ]
        fired = [a for a in allowed if graph.entries[a].shd.evaluate(frozen)]
        optional = [a for a in allowed if a not in fired]

        if speaker == SPEAKER_DB:
            choice: list[int] = []
            if fired:
                choice = [fired[0]]
            elif optional and rng.random() < cfg.exploration_p:
                choice = [optional[int(rng.integers(0, len(optional)))]]
            if not choice:
                continue
            executed = choice
            turns.append(
                TurnRecord(
                    speaker=SPEAKER_DB,
                    acts=(),
                    db_result=vocab.label_of(executed[0]),
                )
            )
        else:
            executed = list(fired)
            for a in optional:
                if rng.random() < cfg.exploration_p:
                    executed.append(a)
            executed.sort()
            recorded: list[str] = []
            same_role_pool = by_role.get(speaker, [])
            for a in executed:
                act_occurrences += 1
                u = rng.random()
                if u < cfg.annotation_noise_p / 2:
                    noise_events += 1  # dropped from the record
                    continue
                if u < cfg.annotation_noise_p:
                    noise_events += 1
                    swap = same_role_pool[int(rng.integers(0, len(same_role_pool)))]
                    recorded.append(vocab.label_of(swap))
                    continue
                recorded.append(vocab.label_of(a))
            # A record may list an act at most once.
            deduped = tuple(dict.fromkeys(recorded))
            turns.append(TurnRecord(speaker=speaker, acts=deduped))
        for a in executed:
            bits[a] = True

    if not turns:
        turns.append(TurnRecord(speaker=SPEAKER_USER, acts=()))
    return Trajectory(
        domain_id=cfg.domain_id,
        turns=tuple(turns),
        traj_id=f"{cfg.domain_id}-{traj_index:05d}",
        meta={
            "terminated_early": terminated_early,
            "noise_events": noise_events,
            "act_occurrences": act_occurrences,
        },
    )


def simulate_dialogues(
    graph: TODFlowGraph,
    cfg: SynthConfig,
    roles: Sequence[str] | None = None,
) -> tuple[Trajectory, ...]:
    """Roll out cfg.n_trajectories compliant dialogues from the truth graph."""
    if roles is None:
        roles = tuple(graph.metadata.get("roles", ()))
        if len(roles) != len(graph.vocabulary):
            raise ValueError("graph metadata lacks roles; pass roles explicitly")
    return tuple(
        _simulate_one(graph, roles, cfg, i) for i in range(cfg.n_trajectories)
    )


def gen_ground_truth_graph(cfg: SynthConfig) -> TODFlowGraph:
    """Draw a random executable truth graph; retries a bounded number of
    seeds derived from cfg.seed and fails with SynthError if none works."""
    roles, vocab = _role_layout(cfg)
    last_failure = "no attempt made"
    for attempt in range(GEN_ATTEMPTS):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([cfg.seed, 0x6E44, attempt]))
        )
        graph = _draw_graph(cfg, roles, vocab, rng)
        states = reachable_states(graph, roles, max_turns=cfg.max_turns)
        fireable = _act_can_fire(graph, roles, states)
        if not all(fireable):
            dead = [vocab.label_of(i) for i, ok in enumerate(fireable) if not ok]
            last_failure = f"attempt {attempt}: unreachable gates for {dead}"
            continue
        pilot_cfg = replace(
            cfg, n_trajectories=PILOT_TRAJECTORIES, annotation_noise_p=0.0
        )
        pilot = simulate_dialogues(graph, pilot_cfg, roles)
        seen: set[int] = set()
        for traj in pilot:
            for turn in traj.turns:
                seen.update(vocab.index_of(l) for l in turn.acts)
                if turn.db_result is not None:
                    seen.add(vocab.index_of(turn.db_result))
        missing = [vocab.label_of(i) for i in range(len(vocab)) if i not in seen]
        if missing:
            last_failure = f"attempt {attempt}: pilot never executed {missing}"
            continue
        return graph
    raise SynthError(
        f"no executable graph found in {GEN_ATTEMPTS} attempts ({last_failure})"
    )


def make_domain(cfg: SynthConfig) -> SynthDomain:
    graph = gen_ground_truth_graph(cfg)
    roles = tuple(graph.metadata["roles"])
    return SynthDomain(
        truth_graph=graph,
        trajectories=simulate_dialogues(graph, cfg, roles),
    )


# ---------------------------------------------------------------------------
# Hand-coded slot-filling preset

def slot_filling_truth(n_slots: int = 4, domain_id: str = "slot-filling") -> TODFlowGraph:
    """Schema replica of the classic slot-filling exchange: the system may
    query whenever every slot is informed; each slot request is gated on
    the intent being stated and the slot neither informed nor already
    requested; users answer requests and are obligated to.
    """
    labels: list[str] = ["USER intent"]
    labels += [f"USER inform slot{i}" for i in range(n_slots)]
    labels += [f"SYSTEM request slot{i}" for i in range(n_slots)]
    labels += ["SYSTEM query"]
    vocab = ActVocabulary(tuple(labels))
    roles = tuple(
        SPEAKER_USER if label.startswith("USER") else SPEAKER_SYSTEM
        for label in labels
    )
    intent = vocab.index_of("USER intent")
    inform = [vocab.index_of(f"USER inform slot{i}") for i in range(n_slots)]
    request = [vocab.index_of(f"SYSTEM request slot{i}") for i in range(n_slots)]
    query = vocab.index_of("SYSTEM query")

    def lit(i: int, positive: bool = True) -> Literal:
        return Literal(act_index=i, positive=positive)

    entries: list[ActEntry] = [ActEntry() for _ in labels]
    entries[intent] = ActEntry(
        can_shdnt=DNFCondition((frozenset({lit(intent, False)}),))
    )
    for i in range(n_slots):
        gate = frozenset({lit(request[i]), lit(inform[i], False)})
        entries[inform[i]] = ActEntry(
            can_shdnt=DNFCondition((gate,)),
            shd=DNFCondition((gate,)),
        )
        entries[request[i]] = ActEntry(
            can_shdnt=DNFCondition(
                (
                    frozenset(
                        {lit(intent), lit(inform[i], False), lit(request[i], False)}
                    ),
                )
            )
        )
    query_gate = frozenset({lit(j) for j in inform})
    entries[query] = ActEntry(
        can_shdnt=DNFCondition((query_gate,)),
        shd=DNFCondition((query_gate,)),
    )
    return TODFlowGraph(
        vocabulary=vocab,
        entries=tuple(entries),
        metadata={
            "domain_id": domain_id,
            "objective_kind": "ground-truth",
            "roles": list(roles),
            "max_turns": 24,
        },
    )


__all__ = [
    "SynthConfig",
    "SynthDomain",
    "gen_ground_truth_graph",
    "simulate_dialogues",
    "make_domain",
    "reachable_states",
    "role_cycle",
    "slot_filling_truth",
]
