"""Condition learning: per-act decision trees read out as DNF conditions.

Four fitters share one recipe (grow a CART on completion bits, select leaves,
read root-to-leaf paths as clauses) and differ in class weighting and the
leaf selection rule:

  fit_shd             precision-first: weighted growth, leaves kept only at
                      unweighted purity >= shd_leaf_purity
  fit_can_shdnt       merged hard gate: balanced growth, each leaf labeled by
                      the alpha-weighted two-term objective
  fit_bc              behavior cloning: unweighted growth, predicted-class
                      leaves
  fit_can_regularized precondition baseline: coverage minus a literal-count
                      penalty, greedy clause dropping

infer_graph runs the chosen fitter per act and assembles a TODFlowGraph.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .core import ActVocabulary, Trajectory, vocabulary_from_trajectories
from .errors import EmptyCorpusError
from .graph import ActEntry, TODFlowGraph
from .dnf import DNFCondition, Literal
from .ingest import (
    ExampleDataset,
    act_roles,
    build_examples,
)

log = logging.getLogger(__name__)

METHOD_TODFLOW = "todflow"
METHOD_TODFLOW_NOSHD = "todflow-noshd"
METHOD_SHD_ONLY = "shd-only"
METHOD_BC = "bc"
METHOD_CAN_REG = "can-reg"
METHODS = (
    METHOD_TODFLOW,
    METHOD_TODFLOW_NOSHD,
    METHOD_SHD_ONLY,
    METHOD_BC,
    METHOD_CAN_REG,
)


@dataclass(frozen=True)
class LearnConfig:
    """Hyperparameters shared by all fitters.

    alpha weighs the negative-class term of the merged objective; low values
    favor permissive gates that rarely block a correct act.
    """

    alpha: float = 0.5
    max_depth: int = 6
    min_leaf_examples: int = 5
    shd_leaf_purity: float = 0.95
    shd_neg_weight: float = 4.0
    complexity_penalty: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_leaf_examples < 1:
            raise ValueError(
                f"min_leaf_examples must be >= 1, got {self.min_leaf_examples}"
            )
        if not 0.5 < self.shd_leaf_purity <= 1.0:
            raise ValueError(
                f"shd_leaf_purity must lie in (0.5, 1.0], got {self.shd_leaf_purity}"
            )
        if not self.shd_neg_weight > 0:
            raise ValueError(
                f"shd_neg_weight must be positive, got {self.shd_neg_weight}"
            )
        if self.complexity_penalty < 0:
            raise ValueError(
                f"complexity_penalty must be >= 0, got {self.complexity_penalty}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ObjectiveReport:
    """Empirical conditional-frequency estimates of one condition on one
    dataset. Conditionals with an empty conditioning event are None, never 0.
    """

    n_examples: int
    n_act: int
    n_fire: int
    p_act_given_fire: float | None
    p_noact_given_fire: float | None
    p_fire_given_act: float | None
    p_nofire_given_noact: float | None
    bc_accuracy: float
    alpha: float
    merged: float | None


@dataclass(frozen=True)
class FitReport:
    act_index: int
    objective: str
    alpha: float
    train: ObjectiveReport
    heldout: ObjectiveReport | None = None
    node_count: int | None = None
    leaf_purities: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()


def evaluate_objectives(
    condition: DNFCondition,
    dataset: ExampleDataset,
    act: int,
    alpha: float = 0.5,
) -> ObjectiveReport:
    """Frequency-ratio estimates of every objective term for one act."""
    fires = condition.evaluate_batch(dataset.completion_matrix())
    acted = dataset.act_column(act).astype(bool)
    n = int(len(acted))
    n_act = int(acted.sum())
    n_fire = int(fires.sum())
    n_noact = n - n_act
    n_nofire = n - n_fire

    def ratio(num: int, den: int) -> float | None:
        return (num / den) if den else None

    p_act_given_fire = ratio(int((acted & fires).sum()), n_fire)
    p_noact_given_fire = ratio(int((~acted & fires).sum()), n_fire)
    p_fire_given_act = ratio(int((acted & fires).sum()), n_act)
    p_nofire_given_noact = ratio(int((~acted & ~fires).sum()), n_noact)
    bc_accuracy = float((acted == fires).mean()) if n else 0.0
    merged = None
    if p_fire_given_act is not None and p_nofire_given_noact is not None:
        merged = p_fire_given_act + alpha * p_nofire_given_noact
    return ObjectiveReport(
        n_examples=n,
        n_act=n_act,
        n_fire=n_fire,
        p_act_given_fire=p_act_given_fire,
        p_noact_given_fire=p_noact_given_fire,
        p_fire_given_act=p_fire_given_act,
        p_nofire_given_noact=p_nofire_given_noact,
        bc_accuracy=bc_accuracy,
        alpha=alpha,
        merged=merged,
    )


# ---------------------------------------------------------------------------
# Tree plumbing

def _leaf_stats(
    clf: DecisionTreeClassifier, X: np.ndarray, y: np.ndarray
) -> dict[int, tuple[int, int]]:
    """Unweighted (neg, pos) training counts per leaf node id."""
    leaf_ids = clf.apply(X)
    stats: dict[int, tuple[int, int]] = {}
    for leaf, label in zip(leaf_ids, y):
        neg, pos = stats.get(int(leaf), (0, 0))
        if label:
            pos += 1
        else:
            neg += 1
        stats[int(leaf)] = (neg, pos)
    return stats


def _leaf_paths(clf: DecisionTreeClassifier) -> dict[int, tuple[tuple[int, bool], ...]]:
    """Map each leaf node id to its root path as (feature, positive) pairs."""
    tree = clf.tree_
    paths: dict[int, tuple[tuple[int, bool], ...]] = {}
    stack: list[tuple[int, tuple[tuple[int, bool], ...]]] = [(0, ())]
    while stack:
        node, path = stack.pop()
        if tree.children_left[node] == -1:
            paths[node] = path
            continue
        threshold = float(tree.threshold[node])
        if not 0.0 < threshold < 1.0:
            raise ValueError(
                f"split threshold {threshold} at node {node} is not consistent "
                "with binary 0/1 features"
            )
        feat = int(tree.feature[node])
        # left branch: feature <= threshold, i.e. bit is 0
        stack.append((int(tree.children_left[node]), path + ((feat, False),)))
        stack.append((int(tree.children_right[node]), path + ((feat, True),)))
    return paths


def _predicted_positive_leaves(clf: DecisionTreeClassifier) -> set[int]:
    """Leaves where predict() returns class 1, matching sklearn's argmax."""
    tree = clf.tree_
    classes = list(clf.classes_)
    fired: set[int] = set()
    for node in range(tree.node_count):
        if tree.children_left[node] != -1:
            continue
        value = tree.value[node][0]
        predicted = classes[int(np.argmax(value))]
        if predicted == 1:
            fired.add(node)
    return fired


def tree_to_dnf(
    clf: DecisionTreeClassifier,
    positive_leaf: str | float | Mapping[int, bool] = "predicted",
    X: np.ndarray | None = None,
    y: np.ndarray | None = None,
) -> DNFCondition:
    """Read a fitted tree out as a DNF over its binary input features.

    One clause per selected leaf: the conjunction of signed tests on the
    root-to-leaf path. Selection rule:
      "predicted"        leaves whose predicted class is 1
      float threshold    leaves with unweighted purity >= threshold (needs X, y)
      mapping            explicit {leaf node id: fire} mask
    """
    paths = _leaf_paths(clf)
    if positive_leaf == "predicted":
        fired = _predicted_positive_leaves(clf)
    elif isinstance(positive_leaf, (int, float)) and not isinstance(positive_leaf, bool):
        if X is None or y is None:
            raise ValueError("purity-threshold readout requires X and y")
        stats = _leaf_stats(clf, np.asarray(X), np.asarray(y))
        threshold = float(positive_leaf)
        fired = {
            leaf
            for leaf, (neg, pos) in stats.items()
            if pos >= 1 and pos / (pos + neg) >= threshold
        }
    elif isinstance(positive_leaf, Mapping):
        fired = {leaf for leaf, fire in positive_leaf.items() if fire}
    else:
        raise ValueError(f"unsupported positive_leaf rule: {positive_leaf!r}")

    clauses = tuple(
        frozenset(Literal(act_index=f, positive=p) for f, p in paths[leaf])
        for leaf in sorted(fired)
        if leaf in paths
    )
    return DNFCondition(clauses)


def _grow(
    X: np.ndarray,
    y: np.ndarray,
    cfg: LearnConfig,
    class_weight,
) -> DecisionTreeClassifier:
    clf = DecisionTreeClassifier(
        criterion="gini",
        max_depth=cfg.max_depth,
        min_samples_leaf=cfg.min_leaf_examples,
        class_weight=class_weight,
        random_state=cfg.seed,
    )
    clf.fit(X, y)
    return clf


def _purities(stats: dict[int, tuple[int, int]]) -> tuple[float, ...]:
    return tuple(
        pos / (pos + neg) for _, (neg, pos) in sorted(stats.items()) if pos + neg
    )


def _report(
    condition: DNFCondition,
    dataset: ExampleDataset,
    act: int,
    objective: str,
    cfg: LearnConfig,
    heldout: ExampleDataset | None = None,
    node_count: int | None = None,
    leaf_purities: tuple[float, ...] = (),
    warnings: tuple[str, ...] = (),
) -> FitReport:
    return FitReport(
        act_index=act,
        objective=objective,
        alpha=cfg.alpha,
        train=evaluate_objectives(condition, dataset, act, alpha=cfg.alpha),
        heldout=(
            evaluate_objectives(condition, heldout, act, alpha=cfg.alpha)
            if heldout is not None
            else None
        ),
        node_count=node_count,
        leaf_purities=leaf_purities,
        warnings=warnings,
    )


def _counts(dataset: ExampleDataset, act: int) -> tuple[np.ndarray, np.ndarray, int, int]:
    X = dataset.completion_matrix()
    y = dataset.act_column(act)
    pos = int(y.sum())
    return X, y, pos, len(y) - pos


# ---------------------------------------------------------------------------
# Fitters

def fit_shd(
    dataset: ExampleDataset,
    act: int,
    cfg: LearnConfig,
    heldout: ExampleDataset | None = None,
) -> tuple[DNFCondition, FitReport]:
    """Soft-obligation condition: fires only where the act is near-certain.

    Grows a tree with the negative class up-weighted (false positives are the
    expensive error), then keeps only leaves whose unweighted purity reaches
    cfg.shd_leaf_purity. No reliable region means constant False, which is
    harmless downstream: an obligation that never fires adds nothing.
    """
    X, y, pos_total, neg_total = _counts(dataset, act)
    if pos_total == 0:
        cond = DNFCondition.false()
        return cond, _report(
            cond, dataset, act, "shd", cfg, heldout,
            warnings=("no positive examples; returning constant False",),
        )
    if neg_total == 0:
        cond = DNFCondition.true()
        return cond, _report(cond, dataset, act, "shd", cfg, heldout)

    clf = _grow(X, y, cfg, class_weight={0: cfg.shd_neg_weight, 1: 1.0})
    stats = _leaf_stats(clf, X, y)
    mask = {
        leaf: (pos >= 1 and pos / (pos + neg) >= cfg.shd_leaf_purity)
        for leaf, (neg, pos) in stats.items()
    }
    cond = tree_to_dnf(clf, positive_leaf=mask)
    warnings = ()
    if cond.is_false:
        warnings = ("no leaf met the purity threshold; returning constant False",)
    return cond, _report(
        cond, dataset, act, "shd", cfg, heldout,
        node_count=int(clf.tree_.node_count),
        leaf_purities=_purities(stats),
        warnings=warnings,
    )


def fit_can_shdnt(
    dataset: ExampleDataset,
    act: int,
    cfg: LearnConfig,
    heldout: ExampleDataset | None = None,
) -> tuple[DNFCondition, FitReport]:
    """Merged hard gate, the two-term trade-off:

        J(f) = P(f=1 | a=1) + alpha * P(f=0 | a=0)

    Tree structure is grown alpha-independently (balanced class weights);
    alpha enters only in the per-leaf label, which picks the larger of the
    leaf's contributions to the two terms: fire iff pos*Q >= alpha*neg*P
    (P, Q = total positives/negatives; ties fire). Two consequences hold by
    construction: the labeled tree's J is >= both constant conditions', and
    raising alpha can only shrink the fired region.
    """
    X, y, pos_total, neg_total = _counts(dataset, act)
    if pos_total == 0:
        cond = DNFCondition.false()
        return cond, _report(
            cond, dataset, act, "can_shdnt", cfg, heldout,
            warnings=("no positive examples; act is never allowed",),
        )
    if neg_total == 0:
        cond = DNFCondition.true()
        return cond, _report(cond, dataset, act, "can_shdnt", cfg, heldout)

    clf = _grow(X, y, cfg, class_weight="balanced")
    stats = _leaf_stats(clf, X, y)
    mask = {
        leaf: (pos * neg_total >= cfg.alpha * neg * pos_total)
        for leaf, (neg, pos) in stats.items()
    }
    cond = tree_to_dnf(clf, positive_leaf=mask)
    return cond, _report(
        cond, dataset, act, "can_shdnt", cfg, heldout,
        node_count=int(clf.tree_.node_count),
        leaf_purities=_purities(stats),
    )


def fit_bc(
    dataset: ExampleDataset,
    act: int,
    cfg: LearnConfig,
    heldout: ExampleDataset | None = None,
) -> tuple[DNFCondition, FitReport]:
    """Behavior cloning: unweighted accuracy-maximizing tree; the condition
    fires exactly where the tree predicts the act."""
    X, y, pos_total, neg_total = _counts(dataset, act)
    if pos_total == 0:
        cond = DNFCondition.false()
        return cond, _report(
            cond, dataset, act, "bc", cfg, heldout,
            warnings=("no positive examples; returning constant False",),
        )
    if neg_total == 0:
        cond = DNFCondition.true()
        return cond, _report(cond, dataset, act, "bc", cfg, heldout)

    clf = _grow(X, y, cfg, class_weight=None)
    stats = _leaf_stats(clf, X, y)
    cond = tree_to_dnf(clf, positive_leaf="predicted")
    return cond, _report(
        cond, dataset, act, "bc", cfg, heldout,
        node_count=int(clf.tree_.node_count),
        leaf_purities=_purities(stats),
    )


def fit_can_regularized(
    dataset: ExampleDataset,
    act: int,
    cfg: LearnConfig,
    heldout: ExampleDataset | None = None,
) -> tuple[DNFCondition, FitReport]:
    """Precondition-only baseline: maximize positive coverage minus
    complexity_penalty per DNF literal.

    The unregularized optimum is the trivial always-True precondition, which
    penalty == 0 returns outright. Otherwise: start from the DNF of all
    leaves containing at least one positive example (coverage 1.0 by
    construction) and greedily drop whole clauses while the penalty saved
    exceeds the exclusive positive coverage lost. Dropping every clause means
    no clause pays for itself, and the trivial optimum wins again.
    """
    X, y, pos_total, neg_total = _counts(dataset, act)
    if pos_total == 0:
        cond = DNFCondition.false()
        return cond, _report(
            cond, dataset, act, "can_reg", cfg, heldout,
            warnings=("no positive examples; act is never allowed",),
        )
    penalty = cfg.complexity_penalty
    if penalty == 0 or neg_total == 0:
        cond = DNFCondition.true()
        return cond, _report(cond, dataset, act, "can_reg", cfg, heldout)

    clf = _grow(X, y, cfg, class_weight="balanced")
    stats = _leaf_stats(clf, X, y)
    mask = {leaf: pos >= 1 for leaf, (neg, pos) in stats.items()}
    cond = tree_to_dnf(clf, positive_leaf=mask)
    node_count = int(clf.tree_.node_count)
    purities = _purities(stats)
    if cond.is_constant:
        return cond, _report(
            cond, dataset, act, "can_reg", cfg, heldout,
            node_count=node_count, leaf_purities=purities,
        )

    X_pos = X[y.astype(bool)]
    clauses = list(cond.clauses)
    # [n_pos, n_clauses] incidence of positives covered per clause
    covered = np.stack(
        [DNFCondition((cl,)).evaluate_batch(X_pos) for cl in clauses], axis=1
    )
    keep = np.ones(len(clauses), dtype=bool)
    while keep.sum() > 0:
        cover_counts = covered[:, keep].sum(axis=1)
        best_gain = 0.0
        best_j = -1
        for j in np.flatnonzero(keep):
            exclusive = int(((cover_counts == 1) & covered[:, j]).sum())
            gain = penalty * len(clauses[j]) - exclusive / pos_total
            if gain > best_gain:
                best_gain = gain
                best_j = int(j)
        if best_j < 0:
            break
        keep[best_j] = False
    survivors = [cl for j, cl in enumerate(clauses) if keep[j]]
    if survivors:
        cond = DNFCondition(tuple(survivors))
    else:
        cond = DNFCondition.true()
    return cond, _report(
        cond, dataset, act, "can_reg", cfg, heldout,
        node_count=node_count, leaf_purities=purities,
    )


# ---------------------------------------------------------------------------
# Whole-graph inference

def _fit_entry(
    method: str,
    dataset: ExampleDataset,
    act: int,
    cfg: LearnConfig,
    heldout: ExampleDataset | None,
) -> tuple[ActEntry, tuple[FitReport, ...]]:
    if method == METHOD_TODFLOW:
        can, r1 = fit_can_shdnt(dataset, act, cfg, heldout)
        shd, r2 = fit_shd(dataset, act, cfg, heldout)
        return ActEntry(can_shdnt=can, shd=shd), (r1, r2)
    if method == METHOD_TODFLOW_NOSHD:
        can, r1 = fit_can_shdnt(dataset, act, cfg, heldout)
        return ActEntry(can_shdnt=can), (r1,)
    if method == METHOD_SHD_ONLY:
        shd, r2 = fit_shd(dataset, act, cfg, heldout)
        return ActEntry(shd=shd), (r2,)
    if method == METHOD_BC:
        bc, r = fit_bc(dataset, act, cfg, heldout)
        return ActEntry(can_shdnt=bc), (r,)
    if method == METHOD_CAN_REG:
        can, r = fit_can_regularized(dataset, act, cfg, heldout)
        return ActEntry(can_shdnt=can, can_only=can), (r,)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def infer_graph(
    trajectories: Sequence[Trajectory],
    method: str = METHOD_TODFLOW,
    cfg: LearnConfig | None = None,
    vocabulary: ActVocabulary | None = None,
    target: str = "auto",
    jobs: int = 1,
) -> tuple[TODFlowGraph, tuple[FitReport, ...]]:
    """Fit every act's conditions on a single-domain corpus.

    target="auto" fits each act on examples from its own speaker's turns
    (user acts against user-turn examples and so on), which keeps the other
    role's turns from flooding the act with trivial negatives. db-result
    bits are features only; their entries stay at the defaults.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    trajectories = list(trajectories)
    if not trajectories:
        raise EmptyCorpusError("no trajectories to fit on")
    domains = sorted({t.domain_id for t in trajectories})
    if len(domains) > 1:
        raise ValueError(
            f"infer_graph expects a single domain, got {domains}; split first"
        )
    cfg = cfg or LearnConfig()
    if vocabulary is None:
        vocabulary = vocabulary_from_trajectories(trajectories)
    roles = act_roles(trajectories, vocabulary)

    # Pre-build every dataset the fits will touch: fit_one must not mutate
    # shared state once the thread pool is running.
    fit_roles = {r for r in roles if r not in ("db", "unseen")}
    keys = fit_roles if target == "auto" else {target}
    datasets = {
        key: build_examples(trajectories, vocabulary, target_speaker=key)
        for key in keys
    }

    def fit_one(act: int) -> tuple[ActEntry, tuple[FitReport, ...]]:
        role = roles[act]
        if role in ("db", "unseen"):
            return ActEntry(), ()
        key = role if target == "auto" else target
        return _fit_entry(method, datasets[key], act, cfg, None)

    indices = list(range(len(vocabulary)))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fit_one, indices))
    else:
        results = [fit_one(i) for i in indices]

    entries = tuple(entry for entry, _ in results)
    reports = tuple(r for _, rs in results for r in rs)
    fingerprint = build_examples(
        trajectories, vocabulary, target_speaker="both"
    ).fingerprint()
    graph = TODFlowGraph(
        vocabulary=vocabulary,
        entries=entries,
        metadata={
            "domain_id": domains[0],
            "objective_kind": method,
            "learn_config": cfg.to_dict(),
            "corpus_fingerprint": fingerprint,
            "roles": list(roles),
            "target": target,
        },
    )
    return graph, reports


__all__ = [
    "LearnConfig",
    "ObjectiveReport",
    "FitReport",
    "evaluate_objectives",
    "tree_to_dnf",
    "fit_shd",
    "fit_can_shdnt",
    "fit_bc",
    "fit_can_regularized",
    "infer_graph",
    "METHODS",
    "METHOD_TODFLOW",
    "METHOD_TODFLOW_NOSHD",
    "METHOD_SHD_ONLY",
    "METHOD_BC",
    "METHOD_CAN_REG",
]
