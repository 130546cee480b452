"""Dialogue-act condition graphs: learn per-act allow and obligation
conditions from trajectories, then use the graph to filter, augment, and
rank the outputs of a base policy.
"""

from .condition import (
    STRATEGIES,
    STRATEGY_COMPLIANCE,
    STRATEGY_GREEDY,
    STRATEGY_MAJORITY,
    STRATEGY_UNIFORM,
    STRATEGY_VIOLATION,
    Candidate,
    ConditionedCandidate,
    RankingStrategy,
    ResponseCandidate,
    SelectionAudit,
    condition_candidate,
    rank_and_select,
    select_response,
    violation_rate,
)
from .core import (
    SPEAKER_DB,
    SPEAKER_SYSTEM,
    SPEAKER_USER,
    ActionSet,
    ActVocabulary,
    CompletionVector,
    GraphExample,
    Trajectory,
    TurnRecord,
    normalize_label,
    vocabulary_from_trajectories,
)
from .dnf import Clause, DNFCondition, Literal
from .errors import (
    BenchmarkError,
    EditError,
    EmptyCorpusError,
    GraphFormatError,
    MissingCandidatesError,
    NoCandidatesError,
    NoTurnsError,
    ParseError,
    ProtocolError,
    ProviderSpawnError,
    ProviderTimeoutError,
    SchemaError,
    SynthError,
    TodflowError,
    VocabularyError,
)
from .evaluation import (
    BenchmarkReport,
    DomainResult,
    RecoveryReport,
    TurnScore,
    aggregate_domains,
    f1_turn,
    graph_recovery_score,
    run_benchmark,
    score_domain,
)
from .graph import (
    ActEntry,
    GraphEdit,
    TODFlowGraph,
    allowed_acts,
    apply_edit,
    deserialize,
    eval_condition,
    parse_edit,
    serialize,
    should_acts,
    to_dot,
)
from .ingest import (
    build_examples,
    detect_format,
    iter_turn_contexts,
    parse_trajectories,
    sgd_adapt,
    split_trajectories,
    write_trajectories_jsonl,
)
from .learn import (
    METHODS,
    FitReport,
    LearnConfig,
    ObjectiveReport,
    evaluate_objectives,
    fit_bc,
    fit_can_regularized,
    fit_can_shdnt,
    fit_shd,
    infer_graph,
    tree_to_dnf,
)
from .providers import (
    ExternalProvider,
    NoisyOracleConfig,
    NoisyOracleProvider,
    Provider,
    ProviderReply,
    ProviderRequest,
    ReplayProvider,
)
from .synth import (
    SynthConfig,
    SynthDomain,
    gen_ground_truth_graph,
    make_domain,
    reachable_states,
    simulate_dialogues,
    slot_filling_truth,
)

__version__ = "0.1.0"

__all__ = [
    "ActEntry",
    "ActionSet",
    "ActVocabulary",
    "BenchmarkError",
    "BenchmarkReport",
    "Candidate",
    "Clause",
    "CompletionVector",
    "ConditionedCandidate",
    "DNFCondition",
    "DomainResult",
    "EditError",
    "EmptyCorpusError",
    "ExternalProvider",
    "FitReport",
    "GraphEdit",
    "GraphExample",
    "GraphFormatError",
    "LearnConfig",
    "Literal",
    "METHODS",
    "MissingCandidatesError",
    "NoCandidatesError",
    "NoTurnsError",
    "NoisyOracleConfig",
    "NoisyOracleProvider",
    "ObjectiveReport",
    "ParseError",
    "ProtocolError",
    "Provider",
    "ProviderReply",
    "ProviderRequest",
    "ProviderSpawnError",
    "ProviderTimeoutError",
    "RankingStrategy",
    "RecoveryReport",
    "ReplayProvider",
    "ResponseCandidate",
    "STRATEGIES",
    "STRATEGY_COMPLIANCE",
    "STRATEGY_GREEDY",
    "STRATEGY_MAJORITY",
    "STRATEGY_UNIFORM",
    "STRATEGY_VIOLATION",
    "SchemaError",
    "SelectionAudit",
    "SPEAKER_DB",
    "SPEAKER_SYSTEM",
    "SPEAKER_USER",
    "SynthConfig",
    "SynthDomain",
    "SynthError",
    "TODFlowGraph",
    "TodflowError",
    "Trajectory",
    "TurnRecord",
    "TurnScore",
    "VocabularyError",
    "aggregate_domains",
    "allowed_acts",
    "apply_edit",
    "build_examples",
    "condition_candidate",
    "deserialize",
    "detect_format",
    "eval_condition",
    "evaluate_objectives",
    "f1_turn",
    "fit_bc",
    "fit_can_regularized",
    "fit_can_shdnt",
    "fit_shd",
    "gen_ground_truth_graph",
    "graph_recovery_score",
    "infer_graph",
    "iter_turn_contexts",
    "make_domain",
    "normalize_label",
    "parse_edit",
    "parse_trajectories",
    "rank_and_select",
    "reachable_states",
    "run_benchmark",
    "score_domain",
    "select_response",
    "serialize",
    "sgd_adapt",
    "should_acts",
    "simulate_dialogues",
    "slot_filling_truth",
    "split_trajectories",
    "to_dot",
    "tree_to_dnf",
    "vocabulary_from_trajectories",
    "violation_rate",
    "write_trajectories_jsonl",
    "__version__",
]
