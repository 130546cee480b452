"""Command-line entry point: infer, condition, eval, export, synth, edit,
bench.

Exit codes: 0 success, 1 runtime error, 2 usage or input error. All
randomness is seeded through flags or config, so a rerun with identical
inputs writes byte-identical primary outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path
from typing import Mapping, Sequence

from .condition import (
    STRATEGIES,
    RankingStrategy,
    rank_and_select,
)
from .core import Trajectory, vocabulary_from_trajectories
from .errors import (
    EmptyCorpusError,
    GraphFormatError,
    ParseError,
    SchemaError,
    TodflowError,
    VocabularyError,
)
from .evaluation import (
    BenchmarkReport,
    aggregate_domains,
    f1_turn,
    run_benchmark,
    score_domain,
)
from .graph import apply_edit, deserialize, obligation_view, parse_edit, serialize, to_dot
from .ingest import (
    act_roles,
    iter_turn_contexts,
    parse_trajectories,
    write_trajectories_jsonl,
)
from .learn import METHODS, LearnConfig, infer_graph
from .providers import (
    MODE_ACTS,
    NoisyOracleConfig,
    NoisyOracleProvider,
    Provider,
    ProviderRequest,
    ReplayProvider,
    ExternalProvider,
)
from .synth import SynthConfig, make_domain

log = logging.getLogger(__name__)

USAGE_ERRORS = (
    FileNotFoundError,
    ParseError,
    SchemaError,
    GraphFormatError,
    VocabularyError,
    EmptyCorpusError,
    ValueError,
)


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_graph(path: str):
    return deserialize(Path(path).read_bytes())


def _merged(args: argparse.Namespace, config: Mapping, key: str, default):
    """Explicit flag beats config file beats default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _learn_config(args: argparse.Namespace, config: Mapping) -> LearnConfig:
    return LearnConfig(
        alpha=float(_merged(args, config, "alpha", 0.5)),
        max_depth=int(_merged(args, config, "max_depth", 6)),
        min_leaf_examples=int(_merged(args, config, "min_leaf_examples", 5)),
        shd_leaf_purity=float(_merged(args, config, "shd_leaf_purity", 0.95)),
        shd_neg_weight=float(_merged(args, config, "shd_neg_weight", 4.0)),
        complexity_penalty=float(_merged(args, config, "complexity_penalty", 0.0)),
        seed=int(_merged(args, config, "seed", 0)),
    )


def _make_provider(
    spec, trajectories: Sequence[Trajectory], vocabulary
) -> Provider:
    """Build a provider from a CLI spec string or a bench-config object.

    String forms: "replay:FILE", "oracle:DROPOUT,SPURIOUS,SEED",
    "cmd:ARGV" (shell-split).
    """
    if isinstance(spec, str):
        kind, _, rest = spec.partition(":")
        if kind == "replay":
            return ReplayProvider(rest, vocabulary)
        if kind == "oracle":
            parts = [p for p in rest.split(",") if p]
            dropout = float(parts[0]) if len(parts) > 0 else 0.0
            spurious = float(parts[1]) if len(parts) > 1 else 0.0
            seed = int(parts[2]) if len(parts) > 2 else 0
            return NoisyOracleProvider(
                trajectories,
                vocabulary,
                NoisyOracleConfig(dropout_p=dropout, spurious_p=spurious, seed=seed),
            )
        if kind == "cmd":
            return ExternalProvider(shlex.split(rest), vocabulary)
        raise ValueError(
            f"unknown provider spec {spec!r}; use replay:FILE, "
            "oracle:DROPOUT,SPURIOUS,SEED or cmd:ARGV"
        )
    if isinstance(spec, Mapping):
        kind = spec.get("kind")
        if kind == "replay":
            return ReplayProvider(spec["path"], vocabulary)
        if kind == "oracle":
            return NoisyOracleProvider(
                trajectories,
                vocabulary,
                NoisyOracleConfig(
                    dropout_p=float(spec.get("dropout_p", 0.0)),
                    spurious_p=float(spec.get("spurious_p", 0.0)),
                    seed=int(spec.get("seed", 0)),
                ),
            )
        if kind == "command":
            return ExternalProvider(
                list(spec["argv"]), vocabulary, timeout=float(spec.get("timeout", 30.0))
            )
        raise ValueError(f"unknown provider kind {kind!r}")
    raise ValueError(f"bad provider spec: {spec!r}")


# ---------------------------------------------------------------------------
# Subcommands

def cmd_infer(args: argparse.Namespace) -> int:
    config = _load_json(args.config) if args.config else {}
    cfg = _learn_config(args, config)
    method = _merged(args, config, "method", "todflow")
    target = _merged(args, config, "target", "auto")
    jobs = int(_merged(args, config, "jobs", 1))
    trajectories = parse_trajectories(args.data, format=args.format)
    graph, reports = infer_graph(
        trajectories,
        method=method,
        cfg=cfg,
        target=target,
        jobs=jobs,
    )
    Path(args.out).write_bytes(serialize(graph))
    fitted = sum(1 for r in reports if not r.warnings)
    log.info(
        "wrote %s: %d acts, %d clean fits, %d fit warnings",
        args.out,
        len(graph.vocabulary),
        fitted,
        len(reports) - fitted,
    )
    return 0


def cmd_condition(args: argparse.Namespace) -> int:
    graph = _load_graph(args.graph)
    vocab = graph.vocabulary
    trajectories = parse_trajectories(args.data, format=args.format)
    roles = act_roles(trajectories, vocab)
    # Predicting system turns, so only system obligations may add acts.
    graph = obligation_view(
        graph, [i for i, r in enumerate(roles) if r == "system"]
    )
    strategy = RankingStrategy(kind=args.strategy, seed=args.seed)
    provider = _make_provider(args.provider, trajectories, vocab)
    records = []
    try:
        for pos, traj in enumerate(trajectories):
            traj_id = traj.traj_id if traj.traj_id is not None else f"traj-{pos:05d}"
            for t, turn, completion in iter_turn_contexts(traj, vocab):
                if turn.speaker != "system":
                    continue
                request = ProviderRequest(
                    domain_id=traj.domain_id,
                    history=traj.turns[:t],
                    completion=completion,
                    k=args.k,
                    mode=MODE_ACTS,
                    trajectory_id=traj_id,
                    turn_index=t,
                )
                try:
                    reply = provider.candidates(request)
                except TodflowError as exc:
                    raise type(exc)(
                        f"{exc} (trajectory {traj_id!r}, turn {t})"
                    ) from exc
                selected, audit = rank_and_select(
                    graph, completion, reply.candidates, strategy
                )
                chosen = audit.conditioned[audit.chosen_index]
                records.append(
                    {
                        "traj": traj_id,
                        "turn": t,
                        "domain": traj.domain_id,
                        "gold": sorted(turn.acts),
                        "selected": sorted(vocab.label_of(a) for a in selected),
                        "strategy": strategy.kind,
                        "chosen_rank": chosen.original.provider_rank,
                        "added": sorted(vocab.label_of(a) for a in chosen.added),
                        "removed": sorted(vocab.label_of(a) for a in chosen.removed),
                    }
                )
    finally:
        provider.close()
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    log.info("wrote %d conditioned predictions to %s", len(records), args.out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    gold_trajs = parse_trajectories(args.gold, format=args.format)
    vocab = vocabulary_from_trajectories(gold_trajs)
    gold_turns: dict[tuple[str, int], tuple[str, frozenset]] = {}
    for pos, traj in enumerate(gold_trajs):
        traj_id = traj.traj_id if traj.traj_id is not None else f"traj-{pos:05d}"
        for t, turn, _ in iter_turn_contexts(traj, vocab):
            gold_turns[(traj_id, t)] = (traj.domain_id, vocab.encode(turn.acts))

    by_domain: dict[str, list[float]] = {}
    matched = 0
    with open(args.pred, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(
                    f"invalid JSON: {exc.msg}", line=lineno, path=args.pred
                )
            key = (rec.get("traj"), rec.get("turn"))
            if key not in gold_turns:
                raise SchemaError(
                    f"prediction line {lineno} references unknown turn {key}"
                )
            domain, gold = gold_turns[key]
            predicted = vocab.encode(rec.get("selected", []))
            by_domain.setdefault(domain, []).append(f1_turn(predicted, gold).f1)
            matched += 1
    if not matched:
        raise EmptyCorpusError("prediction file contains no scored turns")
    domain_means = {d: score_domain(scores) for d, scores in by_domain.items()}
    doc = {
        "domains": {d: round(v, 6) for d, v in sorted(domain_means.items())},
        "macro_f1": round(aggregate_domains(domain_means), 6),
        "n_turns": matched,
    }
    if args.micro:
        all_scores = [s for scores in by_domain.values() for s in scores]
        doc["micro_f1"] = round(score_domain(all_scores), 6)
    out = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    sys.stdout.write(out)
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    graph = _load_graph(args.graph)
    acts = args.acts.split(",") if args.acts else None
    dot = to_dot(
        graph,
        include_shd=not args.no_shd,
        include_negative_edges=not args.no_negative_edges,
        acts=acts,
    )
    Path(args.dot).write_text(dot, encoding="utf-8")
    log.info("wrote %s", args.dot)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    raw = _load_json(args.config)
    cfg = SynthConfig(**raw)
    domain = make_domain(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_path = out_dir / "corpus.jsonl"
    truth_path = out_dir / "truth_graph.json"
    write_trajectories_jsonl(corpus_path, domain.trajectories)
    truth_path.write_bytes(serialize(domain.truth_graph))
    log.info(
        "wrote %d trajectories to %s and the truth graph to %s",
        len(domain.trajectories),
        corpus_path,
        truth_path,
    )
    return 0


def cmd_edit(args: argparse.Namespace) -> int:
    graph = _load_graph(args.graph)
    script = _load_json(args.edits)
    if isinstance(script, Mapping):
        script = [script]
    if not isinstance(script, list):
        raise SchemaError("edit script must be a JSON object or array of objects")
    for pos, obj in enumerate(script):
        edit = parse_edit(obj, graph.vocabulary)
        graph = apply_edit(graph, edit)
        log.info("applied edit %d: %s on act %d", pos, edit.op, edit.act)
    Path(args.out).write_bytes(serialize(graph))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = _load_json(args.config)
    if "synth" in config:
        synth_cfg = SynthConfig(**config["synth"])
        domain = make_domain(synth_cfg)
        trajectories: list[Trajectory] = list(domain.trajectories)
        truth_graphs = {synth_cfg.domain_id: domain.truth_graph}
    elif "data" in config:
        trajectories = parse_trajectories(config["data"])
        truth_graphs = None
    else:
        raise SchemaError("bench config needs either 'synth' or 'data'")
    learn_raw = config.get("learn", {})
    learn_cfg = LearnConfig(**learn_raw)
    provider_spec = config.get("provider", {"kind": "oracle"})

    def factory(domain_trajs, vocab):
        return _make_provider(provider_spec, domain_trajs, vocab)

    report = run_benchmark(
        trajectories,
        factory,
        methods=config.get("methods", ["todflow"]),
        strategies=config.get("strategies", ["compliance"]),
        k=int(config.get("k", 10)),
        learn_cfg=learn_cfg,
        truth_graphs=truth_graphs,
        split_ratio=float(config.get("split_ratio", 0.9)),
        split_seed=int(config.get("split_seed", 0)),
        target=config.get("target", "auto"),
        uniform_seed=int(config.get("uniform_seed", 0)),
        max_failure_rate=float(config.get("max_failure_rate", 0.01)),
    )
    if args.out:
        Path(args.out).write_bytes(
            report.to_json_bytes(include_runtime=args.runtime)
        )
    sys.stdout.write(report.to_text())
    return 0


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="todflow",
        description="Infer dialogue-act condition graphs and use them to "
        "filter, augment, and rank base-policy predictions.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="fit a graph from a trajectory corpus")
    p.add_argument("--data", required=True, help="trajectory file (JSONL or SGD JSON)")
    p.add_argument("--format", choices=["jsonl", "sgd"], default=None)
    p.add_argument("--method", choices=list(METHODS), default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf-examples", type=int, default=None)
    p.add_argument("--shd-leaf-purity", type=float, default=None)
    p.add_argument("--shd-neg-weight", type=float, default=None)
    p.add_argument("--complexity-penalty", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--target", choices=["auto", "user", "system", "both"], default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel per-act fits")
    p.add_argument("--config", default=None, help="JSON defaults, overridden by flags")
    p.add_argument("--out", required=True, help="output graph JSON path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("condition", help="condition provider candidates per turn")
    p.add_argument("--graph", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["jsonl", "sgd"], default=None)
    p.add_argument(
        "--provider",
        required=True,
        help="replay:FILE | oracle:DROPOUT,SPURIOUS,SEED | cmd:ARGV",
    )
    p.add_argument("--strategy", choices=list(STRATEGIES), default="compliance")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="uniform strategy seed")
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.set_defaults(func=cmd_condition)

    p = sub.add_parser("eval", help="score a predictions file against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--format", choices=["jsonl", "sgd"], default=None)
    p.add_argument("--micro", action="store_true", help="also report micro mean")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write a graph as Graphviz DOT")
    p.add_argument("graph")
    p.add_argument("--dot", required=True)
    p.add_argument("--no-shd", action="store_true")
    p.add_argument("--no-negative-edges", action="store_true")
    p.add_argument("--acts", default=None, help="comma-separated act labels")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("synth", help="generate a synthetic domain")
    p.add_argument("--config", required=True, help="SynthConfig JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("edit", help="apply a JSON edit script to a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--edits", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("bench", help="run the method-by-strategy benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument(
        "--runtime",
        action="store_true",
        help="include wall-clock seconds in the JSON report (not reproducible)",
    )
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TodflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
