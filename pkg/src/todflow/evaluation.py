"""Metrics and the benchmark harness: per-turn act-set F1, graph recovery
scoring against a known truth graph, and the method-by-strategy comparison
loop with a no-graph baseline row.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    SPEAKER_SYSTEM,
    ActionSet,
    ActVocabulary,
    Trajectory,
    vocabulary_from_trajectories,
)
from .condition import RankingStrategy, rank_and_select
from .errors import (
    BenchmarkError,
    MissingCandidatesError,
    NoTurnsError,
    ProtocolError,
    ProviderSpawnError,
    ProviderTimeoutError,
)
from .graph import TODFlowGraph, obligation_view
from .ingest import act_roles, iter_turn_contexts, split_trajectories
from .learn import METHODS, LearnConfig, infer_graph
from .providers import MODE_ACTS, Provider, ProviderRequest
from .synth import reachable_states

log = logging.getLogger(__name__)

METHOD_NONE = "none"

FULL_TABLE_MAX_ACTS = 16
SAMPLED_COMPLETIONS = 100_000


@dataclass(frozen=True)
class TurnScore:
    precision: float
    recall: float
    f1: float
    predicted: ActionSet
    gold: ActionSet


def f1_turn(predicted: ActionSet, gold: ActionSet) -> TurnScore:
    """Set precision/recall/F1 with explicit empty-set conventions: two
    empty sets agree perfectly (1.0); one empty side scores 0 with the
    vacuous side's ratio at 1.0."""
    predicted = frozenset(predicted)
    gold = frozenset(gold)
    hit = len(predicted & gold)
    precision = hit / len(predicted) if predicted else (1.0 if not gold else 0.0)
    recall = hit / len(gold) if gold else (1.0 if not predicted else 0.0)
    if not predicted and not gold:
        f1 = 1.0
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return TurnScore(
        precision=precision, recall=recall, f1=f1, predicted=predicted, gold=gold
    )


def score_domain(turn_scores: Sequence) -> float:
    """Mean F1 over one domain's turns."""
    scores = [getattr(s, "f1", s) for s in turn_scores]
    if not scores:
        raise NoTurnsError("cannot average zero turns")
    return float(sum(scores) / len(scores))


def aggregate_domains(domain_means: Mapping[str, float]) -> float:
    """Unweighted mean of per-domain means, regardless of turn counts."""
    if not domain_means:
        raise NoTurnsError("cannot aggregate zero domains")
    return float(sum(domain_means.values()) / len(domain_means))


# ---------------------------------------------------------------------------
# Graph recovery

@dataclass(frozen=True)
class ActRecovery:
    act: str
    role: str
    can_equivalent: bool
    shd_equivalent: bool
    can_equivalent_full: bool
    shd_equivalent_full: bool
    missing_clauses: tuple[str, ...]
    redundant_clauses: tuple[str, ...]
    missing_literals: tuple[str, ...]
    redundant_literals: tuple[str, ...]


@dataclass(frozen=True)
class RecoveryReport:
    per_act: tuple[ActRecovery, ...]
    can_rate: float
    shd_rate: float
    can_rate_full: float
    shd_rate_full: float
    sampled: bool

    @property
    def n_scored_acts(self) -> int:
        return len(self.per_act)


def _clause_diff(
    inferred, truth, vocabulary: ActVocabulary
) -> tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...], tuple[str, ...]]:
    def clause_str(clause) -> str:
        return " & ".join(
            ("" if l.positive else "!") + vocabulary.label_of(l.act_index)
            for l in sorted(clause)
        )

    def literal_strs(clauses) -> tuple[str, ...]:
        out = {
            ("" if l.positive else "!") + vocabulary.label_of(l.act_index)
            for c in clauses
            for l in c
        }
        return tuple(sorted(out))

    missing = [c for c in truth.clauses if c not in set(inferred.clauses)]
    redundant = [c for c in inferred.clauses if c not in set(truth.clauses)]
    return (
        tuple(clause_str(c) for c in missing),
        tuple(clause_str(c) for c in redundant),
        literal_strs(missing),
        literal_strs(redundant),
    )


def _full_table(n: int, seed: int = 0) -> tuple[np.ndarray, bool]:
    """All 2^N completions for small N, else a seeded sample, flagged."""
    if n <= FULL_TABLE_MAX_ACTS:
        grid = ((np.arange(1 << n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
        return grid, False
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, n])))
    return rng.integers(0, 2, size=(SAMPLED_COMPLETIONS, n)).astype(bool), True


def graph_recovery_score(
    inferred: TODFlowGraph,
    truth: TODFlowGraph,
    roles: Sequence[str] | None = None,
    max_turns: int | None = None,
) -> RecoveryReport:
    """Per-act truth-table equivalence between an inferred graph and the
    ground truth.

    The primary figure compares on completions reachable at the act's own
    role's turns (where training data can exist); the full-table figure over
    every completion is reported alongside and is strictly harder. Acts with
    role db (or never observed) are outside both rates.
    """
    if inferred.vocabulary.labels != truth.vocabulary.labels:
        raise ValueError("inferred and truth graphs use different vocabularies")
    vocab = truth.vocabulary
    n = len(vocab)
    if roles is None:
        roles = tuple(truth.metadata.get("roles", ()))
        if len(roles) != n:
            roles = tuple(["user"] * n)  # degenerate fallback: score every act
    if max_turns is None:
        meta_turns = truth.metadata.get("max_turns")
        max_turns = int(meta_turns) if meta_turns is not None else None

    states = reachable_states(truth, roles, max_turns=max_turns)
    by_role: dict[str, np.ndarray] = {}
    for role in set(roles):
        bits_list = [bits for bits, speaker in states if speaker == role]
        by_role[role] = (
            np.array(bits_list, dtype=bool).reshape(len(bits_list), n)
            if bits_list
            else np.zeros((0, n), dtype=bool)
        )
    table, sampled = _full_table(n)

    per_act: list[ActRecovery] = []
    for i in range(n):
        role = roles[i]
        if role not in ("user", "system"):
            continue
        reach = by_role[role]
        inf_entry = inferred.entries[i]
        tru_entry = truth.entries[i]

        def equiv(cond_a, cond_b, mat) -> bool:
            if mat.shape[0] == 0:
                return True
            return bool(
                np.array_equal(cond_a.evaluate_batch(mat), cond_b.evaluate_batch(mat))
            )

        missing_c, redundant_c, missing_l, redundant_l = _clause_diff(
            inf_entry.can_shdnt, tru_entry.can_shdnt, vocab
        )
        per_act.append(
            ActRecovery(
                act=vocab.label_of(i),
                role=role,
                can_equivalent=equiv(inf_entry.can_shdnt, tru_entry.can_shdnt, reach),
                shd_equivalent=equiv(inf_entry.shd, tru_entry.shd, reach),
                can_equivalent_full=equiv(inf_entry.can_shdnt, tru_entry.can_shdnt, table),
                shd_equivalent_full=equiv(inf_entry.shd, tru_entry.shd, table),
                missing_clauses=missing_c,
                redundant_clauses=redundant_c,
                missing_literals=missing_l,
                redundant_literals=redundant_l,
            )
        )
    if not per_act:
        raise ValueError("no user or system acts to score")

    def rate(flag: Callable[[ActRecovery], bool]) -> float:
        return sum(1 for r in per_act if flag(r)) / len(per_act)

    return RecoveryReport(
        per_act=tuple(per_act),
        can_rate=rate(lambda r: r.can_equivalent),
        shd_rate=rate(lambda r: r.shd_equivalent),
        can_rate_full=rate(lambda r: r.can_equivalent_full),
        shd_rate_full=rate(lambda r: r.shd_equivalent_full),
        sampled=sampled,
    )


# ---------------------------------------------------------------------------
# Benchmark loop

PROVIDER_ERRORS = (
    MissingCandidatesError,
    ProtocolError,
    ProviderSpawnError,
    ProviderTimeoutError,
)


@dataclass(frozen=True)
class DomainResult:
    domain_id: str
    n_test_turns: int
    cells: Mapping[str, Mapping[str, float]]
    recovery: Mapping[str, float]


@dataclass(frozen=True)
class Regression:
    domain_id: str
    method: str
    strategy: str
    delta: float


@dataclass(frozen=True)
class BenchmarkReport:
    domains: tuple[DomainResult, ...]
    aggregate: Mapping[str, Mapping[str, float]]
    aggregate_micro: Mapping[str, Mapping[str, float]]
    baseline: tuple[str, str]
    regressions: tuple[Regression, ...]
    provider_calls: int
    provider_failures: int
    skipped_turns: int
    config: Mapping
    runtime_s: float

    def cell(self, method: str, strategy: str) -> float:
        return self.aggregate[method][strategy]

    def to_document(self, include_runtime: bool = False) -> dict:
        doc = {
            "domains": [
                {
                    "domain": d.domain_id,
                    "n_test_turns": d.n_test_turns,
                    "cells": {m: dict(s) for m, s in sorted(d.cells.items())},
                    "recovery": dict(sorted(d.recovery.items())),
                }
                for d in self.domains
            ],
            "aggregate": {m: dict(s) for m, s in sorted(self.aggregate.items())},
            "aggregate_micro": {
                m: dict(s) for m, s in sorted(self.aggregate_micro.items())
            },
            "baseline": list(self.baseline),
            "regressions": [
                {
                    "domain": r.domain_id,
                    "method": r.method,
                    "strategy": r.strategy,
                    "delta": r.delta,
                }
                for r in self.regressions
            ],
            "provider_calls": self.provider_calls,
            "provider_failures": self.provider_failures,
            "skipped_turns": self.skipped_turns,
            "config": dict(self.config),
        }
        if include_runtime:
            doc["runtime_s"] = self.runtime_s
        return doc

    def to_json_bytes(self, include_runtime: bool = False) -> bytes:
        return (
            json.dumps(
                self.to_document(include_runtime), sort_keys=True, indent=2
            )
            + "\n"
        ).encode("utf-8")

    def to_text(self) -> str:
        lines = []
        methods = sorted(self.aggregate)
        strategies = sorted({s for m in self.aggregate.values() for s in m})
        width = max(12, max((len(m) for m in methods), default=12) + 2)
        header = "method".ljust(width) + "".join(s.rjust(12) for s in strategies)
        lines.append("aggregate mean F1 (macro over domains)")
        lines.append(header)
        for m in methods:
            row = m.ljust(width)
            for s in strategies:
                v = self.aggregate[m].get(s)
                row += (f"{v:.4f}" if v is not None else "-").rjust(12)
            lines.append(row)
        if self.regressions:
            lines.append("")
            lines.append("regressions vs baseline " + "/".join(self.baseline) + ":")
            for r in self.regressions:
                lines.append(
                    f"  {r.domain_id}: {r.method}/{r.strategy} {r.delta:+.4f}"
                )
        lines.append("")
        lines.append(
            f"provider calls: {self.provider_calls}, failures: "
            f"{self.provider_failures}, skipped turns: {self.skipped_turns}"
        )
        return "\n".join(lines) + "\n"


ProviderFactory = Callable[[Sequence[Trajectory], ActVocabulary], Provider]


def run_benchmark(
    trajectories: Sequence[Trajectory],
    provider_factory: ProviderFactory,
    methods: Sequence[str] = ("todflow",),
    strategies: Sequence[str] = ("compliance",),
    k: int = 10,
    learn_cfg: LearnConfig | None = None,
    truth_graphs: Mapping[str, TODFlowGraph] | None = None,
    split_ratio: float = 0.9,
    split_seed: int = 0,
    target: str = "auto",
    uniform_seed: int = 0,
    max_failure_rate: float = 0.01,
) -> BenchmarkReport:
    """Infer graphs per method on each domain's train split, condition the
    provider's candidates per strategy on the test split's system turns, and
    tabulate mean F1 next to an unconditioned baseline row.

    The provider is called once per test turn; every method and strategy
    shares the same cached candidates, so cells differ only by graph and
    ranking. Turns where the provider fails are skipped and counted;
    exceeding max_failure_rate aborts.
    """
    started = time.monotonic()
    learn_cfg = learn_cfg or LearnConfig()
    methods = list(dict.fromkeys(methods))
    strategies = list(dict.fromkeys(strategies))
    for m in methods:
        if m != METHOD_NONE and m not in METHODS:
            raise BenchmarkError(f"unknown method {m!r}")
    baseline = (METHOD_NONE, "greedy")
    all_methods = list(methods)
    if METHOD_NONE not in all_methods:
        all_methods.insert(0, METHOD_NONE)
    all_strategies = list(strategies)
    if "greedy" not in all_strategies:
        all_strategies.insert(0, "greedy")

    by_domain: dict[str, list[Trajectory]] = {}
    for traj in trajectories:
        by_domain.setdefault(traj.domain_id, []).append(traj)
    if not by_domain:
        raise BenchmarkError("no trajectories to benchmark")

    domain_results: list[DomainResult] = []
    micro_scores: dict[tuple[str, str], list[float]] = {}
    provider_calls = 0
    provider_failures = 0

    for domain_id in sorted(by_domain):
        domain_trajs = by_domain[domain_id]
        if truth_graphs and domain_id in truth_graphs:
            # Recovery scoring needs index-compatible graphs, so fit over
            # the reference vocabulary instead of the observed one.
            vocab = truth_graphs[domain_id].vocabulary
        else:
            vocab = vocabulary_from_trajectories(domain_trajs)
        train, test = split_trajectories(domain_trajs, ratio=split_ratio, seed=split_seed)
        if not train or not test:
            raise BenchmarkError(
                f"domain {domain_id!r}: split gave {len(train)} train / "
                f"{len(test)} test trajectories; adjust split_ratio"
            )

        graphs: dict[str, TODFlowGraph] = {}
        recovery: dict[str, float] = {}
        roles = act_roles(domain_trajs, vocab)
        system_acts = [i for i, r in enumerate(roles) if r == SPEAKER_SYSTEM]
        for method in all_methods:
            if method == METHOD_NONE:
                graphs[method] = TODFlowGraph.empty(
                    vocab, metadata={"domain_id": domain_id, "objective_kind": "none"}
                )
            else:
                fitted, _ = infer_graph(
                    train, method=method, cfg=learn_cfg, vocabulary=vocab, target=target
                )
                if truth_graphs and domain_id in truth_graphs:
                    recovery[method] = graph_recovery_score(
                        fitted, truth_graphs[domain_id]
                    ).can_rate
                graphs[method] = fitted
            # Only the predicted speaker's obligations may add acts to a turn.
            graphs[method] = obligation_view(graphs[method], system_acts)

        provider = provider_factory(domain_trajs, vocab)
        cell_scores: dict[tuple[str, str], list[float]] = {
            (m, s): [] for m in all_methods for s in all_strategies
        }
        n_test_turns = 0
        try:
            for pos, traj in enumerate(test):
                traj_id = traj.traj_id if traj.traj_id is not None else f"traj-{pos:05d}"
                for t, turn, completion in iter_turn_contexts(traj, vocab):
                    if turn.speaker != "system":
                        continue
                    n_test_turns += 1
                    gold = vocab.encode(turn.acts)
                    request = ProviderRequest(
                        domain_id=domain_id,
                        history=traj.turns[:t],
                        completion=completion,
                        k=k,
                        mode=MODE_ACTS,
                        trajectory_id=traj_id,
                        turn_index=t,
                    )
                    provider_calls += 1
                    try:
                        reply = provider.candidates(request)
                        if not reply.candidates:
                            raise MissingCandidatesError(
                                f"empty candidate list for {traj_id!r} turn {t}"
                            )
                    except PROVIDER_ERRORS as exc:
                        provider_failures += 1
                        log.warning(
                            "provider failed on %s turn %d: %s", traj_id, t, exc
                        )
                        continue
                    for method in all_methods:
                        for strat_kind in all_strategies:
                            selected, _ = rank_and_select(
                                graphs[method],
                                completion,
                                reply.candidates,
                                RankingStrategy(kind=strat_kind, seed=uniform_seed),
                            )
                            score = f1_turn(selected, gold).f1
                            cell_scores[(method, strat_kind)].append(score)
        finally:
            provider.close()

        cells = {
            m: {
                s: score_domain(cell_scores[(m, s)]) if cell_scores[(m, s)] else 0.0
                for s in all_strategies
            }
            for m in all_methods
        }
        for key, scores in cell_scores.items():
            micro_scores.setdefault(key, []).extend(scores)
        domain_results.append(
            DomainResult(
                domain_id=domain_id,
                n_test_turns=n_test_turns,
                cells=cells,
                recovery=recovery,
            )
        )

    if provider_calls == 0:
        raise BenchmarkError("no system turns to score")
    failure_rate = provider_failures / provider_calls
    if failure_rate > max_failure_rate:
        raise BenchmarkError(
            f"provider failed on {provider_failures}/{provider_calls} turns "
            f"({failure_rate:.1%}), above the {max_failure_rate:.1%} limit"
        )

    aggregate = {
        m: {
            s: aggregate_domains(
                {d.domain_id: d.cells[m][s] for d in domain_results}
            )
            for s in all_strategies
        }
        for m in all_methods
    }
    aggregate_micro = {
        m: {
            s: (
                score_domain(micro_scores[(m, s)])
                if micro_scores.get((m, s))
                else 0.0
            )
            for s in all_strategies
        }
        for m in all_methods
    }

    regressions: list[Regression] = []
    for d in domain_results:
        base = d.cells[baseline[0]][baseline[1]]
        for m in all_methods:
            for s in all_strategies:
                if (m, s) == baseline:
                    continue
                delta = d.cells[m][s] - base
                if delta < 0:
                    regressions.append(Regression(d.domain_id, m, s, delta))

    return BenchmarkReport(
        domains=tuple(domain_results),
        aggregate=aggregate,
        aggregate_micro=aggregate_micro,
        baseline=baseline,
        regressions=tuple(regressions),
        provider_calls=provider_calls,
        provider_failures=provider_failures,
        skipped_turns=provider_failures,
        config={
            "methods": list(all_methods),
            "strategies": list(all_strategies),
            "k": k,
            "learn": learn_cfg.to_dict(),
            "split_ratio": split_ratio,
            "split_seed": split_seed,
            "target": target,
            "uniform_seed": uniform_seed,
        },
        runtime_s=time.monotonic() - started,
    )


__all__ = [
    "TurnScore",
    "f1_turn",
    "score_domain",
    "aggregate_domains",
    "ActRecovery",
    "RecoveryReport",
    "graph_recovery_score",
    "DomainResult",
    "Regression",
    "BenchmarkReport",
    "run_benchmark",
    "METHOD_NONE",
]
