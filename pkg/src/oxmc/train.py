"""Training orchestration: baseline models and overlap refinement.

A baseline model embeds labels, builds the tree, and trains matcher and
ranker classifiers against the tree's own partition.  Refinement
alternates: match the training set with the current model, recompute
the cluster assignment in closed form from the match statistics, then
retrain all classifiers against the new assignment from scratch.

Negative sampling follows the tree.  A matcher classifier for a child
node takes as negatives the instances active at the parent but not at
the child.  A ranker classifier for ``(label, cluster)`` takes the
instances active at the cluster minus the label's positives, so a label
duplicated into several clusters shares its positives across copies
while each copy gets its own cluster-local negatives.  That asymmetry
is what lets duplicated classifiers specialize to one mode each.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cluster import build_tree, pifa_embeddings
from .dataio import Dataset
from .linear import TrainProblem, WeightVector, train_ovr
from .matrices import as_matrix, binarize, matmul, transpose
from .model import XmcModel, match_matrix
from .overlap import (
    ClusterAssignment,
    default_capacity,
    objective_binary,
    objective_relaxed,
    project_assignment,
    random_duplicate,
    solve_rlap_greedy,
)

__all__ = [
    "TrainConfig",
    "train_baseline",
    "refine",
    "worker_count",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for tree building, classifier training, and refinement."""

    branching: int = 32
    max_leaf_size: int = 100
    beam: int = 10
    overlap_budget: int = 2
    rounds: int = 1
    reg_c: float = 1.0
    weight_threshold: float = 0.1
    tol: float = 1e-3
    max_iter: int = 100
    seed: int = 0
    score_mode: str = "combined"
    assignment_method: str = "projection"  # or "capacity" / "random"
    capacity: int | None = None  # per-cluster label cap for "capacity"
    n_threads: int | None = None


def worker_count(cfg: TrainConfig | None = None) -> int:
    """Thread pool size: config override, then OXMC_THREADS, then cores."""
    if cfg is not None and cfg.n_threads:
        return max(1, int(cfg.n_threads))
    env = os.environ.get("OXMC_THREADS", "")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _problem_seed(base: int, *key: int) -> int:
    """Stable per-classifier shuffle seed, independent of training order."""
    return int(np.random.SeedSequence((base, *key)).generate_state(1)[0])


def _train_many(problems: list[tuple[tuple, TrainProblem]], workers: int) -> dict:
    """Train classifiers keyed by id, in parallel, deterministically."""
    if workers <= 1 or len(problems) <= 1:
        return {key: train_ovr(p) for key, p in problems}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda kp: train_ovr(kp[1]), problems))
    return {key: w for (key, _), w in zip(problems, results)}


def _instance_activity(y, assignment: ClusterAssignment):
    """Binary n x K matrix: instance i is active at cluster j when it
    carries at least one label assigned to j."""
    return binarize(matmul(as_matrix(y), assignment.matrix))


def _node_activity(tree, leaf_activity) -> dict[int, np.ndarray]:
    """Instance index arrays per node, leaves upward (union of children)."""
    act: dict[int, np.ndarray] = {}
    leaf_cols = leaf_activity.tocsc()
    for j, leaf in enumerate(tree.leaves):
        act[leaf] = leaf_cols.indices[leaf_cols.indptr[j] : leaf_cols.indptr[j + 1]].astype(
            np.int64
        )
    for node in range(tree.n_nodes - 1, -1, -1):
        if tree.is_leaf(node):
            continue
        act[node] = np.unique(np.concatenate([act[c] for c in tree.children[node]]))
    return act


def _matcher_problems(tree, activity, data: Dataset, cfg: TrainConfig):
    """One binary problem per tree edge: child positives vs siblings'."""
    problems = []
    empties = {}
    for node in range(tree.n_nodes):
        for child in tree.children[node]:
            pos = activity[child]
            neg = np.setdiff1d(activity[node], pos, assume_unique=True)
            if pos.size == 0:
                empties[(node, child)] = WeightVector.empty(data.d)
                continue
            problems.append(
                (
                    (node, child),
                    TrainProblem(
                        x=data.X,
                        positives=pos,
                        negatives=neg,
                        reg_c=cfg.reg_c,
                        weight_threshold=cfg.weight_threshold,
                        tol=cfg.tol,
                        max_iter=cfg.max_iter,
                        seed=_problem_seed(cfg.seed, 1, node, child),
                    ),
                )
            )
    return problems, empties


def _ranker_problems(assignment: ClusterAssignment, leaf_activity, data: Dataset,
                     cfg: TrainConfig):
    """One binary problem per (label, cluster) slot of the assignment.

    Positives are shared across a label's copies; negatives come from
    the copy's own cluster.
    """
    y_cols = data.Y.tocsc()
    act_cols = leaf_activity.tocsc()
    problems = []
    empties = {}
    for label, cluster in assignment.to_pairs():
        pos = y_cols.indices[y_cols.indptr[label] : y_cols.indptr[label + 1]].astype(np.int64)
        if pos.size == 0:
            empties[(label, cluster)] = WeightVector.empty(data.d)
            continue
        in_leaf = act_cols.indices[
            act_cols.indptr[cluster] : act_cols.indptr[cluster + 1]
        ].astype(np.int64)
        neg = np.setdiff1d(in_leaf, pos, assume_unique=True)
        problems.append(
            (
                (label, cluster),
                TrainProblem(
                    x=data.X,
                    positives=pos,
                    negatives=neg,
                    reg_c=cfg.reg_c,
                    weight_threshold=cfg.weight_threshold,
                    tol=cfg.tol,
                    max_iter=cfg.max_iter,
                    seed=_problem_seed(cfg.seed, 2, label, cluster),
                ),
            )
        )
    return problems, empties


def _fit_against_assignment(tree, assignment: ClusterAssignment, data: Dataset,
                            cfg: TrainConfig, initial: ClusterAssignment) -> XmcModel:
    """Cold-train matcher and ranker classifiers for a fixed assignment."""
    workers = worker_count(cfg)
    leaf_activity = _instance_activity(data.Y, assignment)
    activity = _node_activity(tree, leaf_activity)
    matcher_problems, matcher = _matcher_problems(tree, activity, data, cfg)
    ranker_problems, ranker = _ranker_problems(assignment, leaf_activity, data, cfg)
    matcher.update(_train_many(matcher_problems, workers))
    ranker.update(_train_many(ranker_problems, workers))
    return XmcModel(
        tree=tree,
        matcher=matcher,
        ranker=ranker,
        assignment=assignment,
        initial_assignment=initial,
        beam=cfg.beam,
        n_features=data.d,
        seed=cfg.seed,
        score_mode=cfg.score_mode,
    )


def train_baseline(data: Dataset, cfg: TrainConfig) -> XmcModel:
    """Embed labels, build the tree, and train against its partition."""
    t0 = time.perf_counter()
    emb, zero = pifa_embeddings(data.X, data.Y)
    if zero.any():
        log.info("%d of %d labels have no positive instances", int(zero.sum()), data.n_labels)
    tree = build_tree(emb, cfg.branching, cfg.max_leaf_size, seed=cfg.seed)
    assignment = ClusterAssignment.from_label_sets(
        tree.label_sets(), data.n_labels, cfg.overlap_budget, provenance="initial-partition"
    )
    model = _fit_against_assignment(tree, assignment, data, cfg, initial=assignment)
    log.info(
        "baseline: %d clusters, depth %d, %.2fs",
        tree.n_clusters, tree.depth, time.perf_counter() - t0,
    )
    return model


def _next_assignment(model: XmcModel, data: Dataset, cfg: TrainConfig,
                     matches) -> ClusterAssignment:
    if cfg.assignment_method == "projection":
        return project_assignment(
            data.Y, matches, cfg.overlap_budget, fallback=model.initial_assignment
        )
    if cfg.assignment_method == "capacity":
        capacity = cfg.capacity or default_capacity(data.n_labels, model.n_clusters)
        return solve_rlap_greedy(
            data.Y, matches, cfg.overlap_budget, capacity,
            fallback=model.initial_assignment,
        )
    if cfg.assignment_method == "random":
        return random_duplicate(
            model.initial_assignment, cfg.overlap_budget, seed=cfg.seed
        )
    raise ValueError(f"unknown assignment method {cfg.assignment_method!r}")


def refine(model: XmcModel, data: Dataset, cfg: TrainConfig,
           log_path=None, clusters_only: bool = False) -> XmcModel:
    """Alternate assignment updates and retraining for ``cfg.rounds`` rounds.

    Each round matches the training set, recomputes the assignment from
    the match statistics, rewrites the tree leaves, and cold-retrains
    the rankers (and the matcher too, unless ``clusters_only``).
    Returns a new model; the input model is untouched.  Per-round lines
    ``round relaxed binary seconds`` go to the log and, when
    ``log_path`` is given, to that file.
    """
    if cfg.rounds < 1:
        raise ValueError(f"round count must be at least 1, got {cfg.rounds}")
    lines = []
    current = model
    for round_no in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        matches = match_matrix(current, data.X)
        assignment = _next_assignment(current, data, cfg, matches)
        relaxed = objective_relaxed(data.Y, matches, assignment)
        exact = objective_binary(data.Y, matches, assignment)
        tree = _clone_tree_with_sets(current.tree, assignment.label_sets())
        if clusters_only:
            next_model = _fit_rankers_only(current, tree, assignment, data, cfg)
        else:
            next_model = _fit_against_assignment(
                tree, assignment, data, cfg, initial=current.initial_assignment
            )
        elapsed = time.perf_counter() - t0
        line = f"{round_no} {relaxed:.0f} {exact} {elapsed:.3f}"
        lines.append(line)
        log.info("refine round %s", line)
        current = next_model
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return current


def _clone_tree_with_sets(tree, sets):
    from .cluster import LabelTree

    clone = LabelTree(
        list(tree.parents),
        [list(c) for c in tree.children],
        [None if l is None else l.copy() for l in tree.leaf_labels],
        tree.branching,
        tree.n_labels,
    )
    clone.set_label_sets(sets)
    return clone


def _fit_rankers_only(current: XmcModel, tree, assignment: ClusterAssignment,
                      data: Dataset, cfg: TrainConfig) -> XmcModel:
    """Install a new assignment keeping the matcher weights frozen."""
    workers = worker_count(cfg)
    leaf_activity = _instance_activity(data.Y, assignment)
    ranker_problems, ranker = _ranker_problems(assignment, leaf_activity, data, cfg)
    ranker.update(_train_many(ranker_problems, workers))
    return XmcModel(
        tree=tree,
        matcher=dict(current.matcher),
        ranker=ranker,
        assignment=assignment,
        initial_assignment=current.initial_assignment,
        beam=cfg.beam,
        n_features=data.d,
        seed=cfg.seed,
        score_mode=cfg.score_mode,
    )
