"""The trained classifier: tree matcher plus per-cluster label rankers.

Matching walks the tree level by level with a beam: at each level the
children of surviving nodes are scored with the matcher classifiers,
their squashed scores multiplied into the parent path score, and the
best ``beam`` candidates kept.  Leaves already reached ride along
unchanged, so ragged trees match fine.  Prediction scores every label
of every matched cluster with its ranker; a label matched through
several clusters is scored once per occurrence and the occurrence
scores are averaged, so duplicated labels are not advantaged by mere
multiplicity.
"""

from __future__ import annotations

import json
import os

import numpy as np
import scipy.sparse as sp

from .cluster import LabelTree
from .linear import WeightVector, score, sigmoid, stack_weights
from .matrices import SparseMatrix, as_matrix
from .overlap import ClusterAssignment

__all__ = [
    "Prediction",
    "XmcModel",
    "match",
    "match_matrix",
    "predict",
    "predict_many",
    "save_model",
    "load_model",
]


class Prediction:
    """Ranked labels with scores for one instance."""

    __slots__ = ("labels", "scores")

    def __init__(self, labels: np.ndarray, scores: np.ndarray):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.scores = np.asarray(scores, dtype=np.float64)

    def __repr__(self):
        pairs = ", ".join(f"{l}:{s:.4f}" for l, s in zip(self.labels, self.scores))
        return f"Prediction({pairs})"


class XmcModel:
    """Matcher weights, ranker weights, and the cluster assignment they serve.

    ``matcher`` maps ``(node, child)`` edges to weight vectors;
    ``ranker`` maps ``(label, cluster)`` incidences to weight vectors
    and must carry exactly one entry per stored coordinate of the
    assignment matrix.  ``initial_assignment`` preserves the tree
    builder's partition so later refinements can fall back to it for
    labels the matcher never reaches.
    """

    def __init__(
        self,
        tree: LabelTree,
        matcher: dict,
        ranker: dict,
        assignment: ClusterAssignment,
        initial_assignment: ClusterAssignment,
        beam: int,
        n_features: int,
        seed: int = 0,
        score_mode: str = "combined",
    ):
        self.tree = tree
        self.matcher = matcher
        self.ranker = ranker
        self.assignment = assignment
        self.initial_assignment = initial_assignment
        self.beam = int(beam)
        self.n_features = int(n_features)
        self.seed = int(seed)
        if score_mode not in ("combined", "ranker-only"):
            raise ValueError(f"unknown score mode {score_mode!r}")
        self.score_mode = score_mode
        self._level_cache = None
        self._leaf_cache = None
        self._validate()

    def _validate(self) -> None:
        if self.beam < 1:
            raise ValueError(f"beam width must be at least 1, got {self.beam}")
        edges = {
            (node, child)
            for node in range(self.tree.n_nodes)
            for child in self.tree.children[node]
        }
        if set(self.matcher.keys()) != edges:
            raise ValueError("matcher weights do not cover exactly the tree edges")
        incident = set(self.assignment.to_pairs())
        if set(self.ranker.keys()) != incident:
            raise ValueError(
                "ranker weights do not match the cluster assignment coordinates"
            )
        sets = self.tree.label_sets()
        for j in range(self.assignment.n_clusters):
            if not np.array_equal(self.assignment.column_support(j), sets[j]):
                raise ValueError(f"leaf {j} label set disagrees with the assignment")

    @property
    def n_labels(self) -> int:
        return self.assignment.n_labels

    @property
    def n_clusters(self) -> int:
        return self.assignment.n_clusters

    def invalidate_caches(self) -> None:
        self._level_cache = None
        self._leaf_cache = None

    def _levels(self):
        """Per-depth stacked matcher weights for batched beam search.

        For every tree level holding internal nodes: a CSR stack of all
        child classifiers at that level plus, per internal node, the
        slice of stacked rows and the child ids it scores.
        """
        if self._level_cache is None:
            cache = []
            for level_nodes in self.tree.levels():
                internal = [n for n in level_nodes if not self.tree.is_leaf(n)]
                if not internal:
                    continue
                weights = []
                spans = {}
                for node in internal:
                    start = len(weights)
                    weights.extend(self.matcher[(node, c)] for c in self.tree.children[node])
                    spans[node] = (start, len(weights))
                cache.append(
                    {
                        "stack": stack_weights(weights, self.n_features),
                        "spans": spans,
                    }
                )
            self._level_cache = cache
        return self._level_cache

    def _leaf_rankers(self, cluster: int):
        """Stacked ranker weights and label ids of one cluster."""
        if self._leaf_cache is None:
            self._leaf_cache = {}
        if cluster not in self._leaf_cache:
            labels = self.assignment.column_support(cluster)
            stack = stack_weights(
                [self.ranker[(int(l), cluster)] for l in labels], self.n_features
            )
            self._leaf_cache[cluster] = (labels, stack)
        return self._leaf_cache[cluster]


def _top_beam(ids: np.ndarray, scores: np.ndarray, beam: int):
    """Keep the best ``beam`` candidates; ties go to the lower node id."""
    if ids.size <= beam:
        order = np.lexsort((ids, -scores))
    else:
        order = np.lexsort((ids, -scores))[:beam]
    return ids[order], scores[order]


def match(model: XmcModel, x_row) -> tuple[np.ndarray, np.ndarray]:
    """Route one instance to its clusters.

    Returns (cluster ids, path scores), at most ``beam`` of them,
    ordered by descending path score with ties toward the lower id.
    Path scores multiply squashed matcher scores along the root-to-leaf
    path.  This is the plain per-instance route; ``match_matrix``
    recomputes it batched, and the two must agree.
    """
    x_row = as_matrix(x_row)
    tree = model.tree
    ids = np.array([tree.root], dtype=np.int64)
    scores = np.array([1.0])
    while any(not tree.is_leaf(n) for n in ids):
        cand_ids = []
        cand_scores = []
        for node, ps in zip(ids, scores):
            if tree.is_leaf(node):
                cand_ids.append(int(node))
                cand_scores.append(float(ps))
                continue
            for child in tree.children[node]:
                raw = score(model.matcher[(node, child)], x_row)
                cand_ids.append(child)
                cand_scores.append(float(ps * sigmoid(np.array([raw]))[0]))
        ids, scores = _top_beam(
            np.asarray(cand_ids, dtype=np.int64), np.asarray(cand_scores), model.beam
        )
    leaf_pos = {leaf: j for j, leaf in enumerate(tree.leaves)}
    clusters = np.asarray([leaf_pos[int(n)] for n in ids], dtype=np.int64)
    return clusters, scores


def _match_many(model: XmcModel, x) -> list[tuple[np.ndarray, np.ndarray]]:
    """Beam search for every row of ``x`` with level-batched scoring."""
    x = as_matrix(x)
    n = x.shape[0]
    tree = model.tree
    levels = model._levels()
    # squashed scores of every matcher classifier, one dense block per level;
    # absent raw scores are 0 and squash to 0.5 like any other zero dot product
    squashed = [sigmoid((x @ lvl["stack"].T.tocsr()).toarray()) for lvl in levels]
    leaf_pos = {leaf: j for j, leaf in enumerate(tree.leaves)}
    out = []
    children = tree.children
    is_leaf = [tree.is_leaf(i) for i in range(tree.n_nodes)]
    for i in range(n):
        ids = np.array([tree.root], dtype=np.int64)
        scores = np.array([1.0])
        depth = 0
        while any(not is_leaf[v] for v in ids):
            spans = levels[depth]["spans"]
            block = squashed[depth]
            cand_ids = []
            cand_scores = []
            for node, ps in zip(ids, scores):
                if is_leaf[node]:
                    cand_ids.append(int(node))
                    cand_scores.append(float(ps))
                    continue
                start, stop = spans[node]
                for k, child in enumerate(children[node]):
                    cand_ids.append(child)
                    cand_scores.append(float(ps * block[i, start + k]))
            ids, scores = _top_beam(
                np.asarray(cand_ids, dtype=np.int64),
                np.asarray(cand_scores),
                model.beam,
            )
            depth += 1
        clusters = np.asarray([leaf_pos[int(v)] for v in ids], dtype=np.int64)
        out.append((clusters, scores))
    return out


def match_matrix(model: XmcModel, x) -> SparseMatrix:
    """Binary n x K matrix of matched clusters, one row per instance.

    Each row holds exactly ``min(beam, K)`` ones: the clusters the beam
    search ends on.
    """
    x = as_matrix(x)
    matched = _match_many(model, x)
    rows = []
    cols = []
    for i, (clusters, _) in enumerate(matched):
        rows.extend([i] * clusters.size)
        cols.extend(int(c) for c in clusters)
    mat = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(x.shape[0], model.n_clusters)
    )
    return SparseMatrix(mat)


def _score_matches(model, x, matched, k: int) -> list[Prediction]:
    """Rank labels of the matched clusters, averaging duplicate occurrences."""
    x = as_matrix(x)
    n = x.shape[0]
    combined = model.score_mode == "combined"
    # gather instances per cluster so each ranker stack multiplies once
    per_cluster: dict[int, list[int]] = {}
    for i, (clusters, _) in enumerate(matched):
        for j in clusters:
            per_cluster.setdefault(int(j), []).append(i)
    # per instance: concatenated candidate labels and occurrence scores
    cand_labels: list[list[np.ndarray]] = [[] for _ in range(n)]
    cand_scores: list[list[np.ndarray]] = [[] for _ in range(n)]
    for j in sorted(per_cluster):
        instances = per_cluster[j]
        labels, stack = model._leaf_rankers(j)
        if labels.size == 0:
            continue
        block = sigmoid((x[instances] @ stack.T.tocsr()).toarray())
        for row, i in enumerate(instances):
            clusters, pscores = matched[i]
            path = float(pscores[np.flatnonzero(clusters == j)[0]])
            occ = block[row] * path if combined else block[row].copy()
            cand_labels[i].append(labels)
            cand_scores[i].append(occ)
    out = []
    for i in range(n):
        if not cand_labels[i] or k == 0:
            out.append(Prediction(np.empty(0, dtype=np.int64), np.empty(0)))
            continue
        labels = np.concatenate(cand_labels[i])
        scores = np.concatenate(cand_scores[i])
        uniq, inv = np.unique(labels, return_inverse=True)
        sums = np.zeros(uniq.size)
        counts = np.zeros(uniq.size)
        np.add.at(sums, inv, scores)
        np.add.at(counts, inv, 1.0)
        means = sums / counts
        order = np.lexsort((uniq, -means))[:k]
        out.append(Prediction(uniq[order], means[order]))
    return out


def predict_many(model: XmcModel, x, k: int = 10) -> list[Prediction]:
    """Top-``k`` predictions for every row of ``x``.

    Ranked by the per-label mean over matched occurrences of
    ``sigmoid(ranker score) * path score`` (or the squashed ranker
    score alone in ranker-only mode); ties go to the lower label id.
    """
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    x = as_matrix(x)
    matched = _match_many(model, x)
    return _score_matches(model, x, matched, k)


def predict(model: XmcModel, x_row, k: int = 10) -> Prediction:
    """Top-``k`` prediction for a single instance row."""
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    x_row = as_matrix(x_row)
    matched = [match(model, x_row)]
    return _score_matches(model, x_row, matched, k)[0]


def _write_weight_lines(fh, items) -> None:
    for key_a, key_b, w in items:
        pairs = " ".join(f"{i}:{float(v)!r}" for i, v in zip(w.idx, w.val))
        tail = f" {pairs}" if pairs else ""
        fh.write(f"{key_a} {key_b} {w.nnz}{tail}\n")


def _read_weight_lines(path, dim):
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh.read().splitlines():
            if not line:
                continue
            parts = line.split()
            a, b, nnz = int(parts[0]), int(parts[1]), int(parts[2])
            if len(parts) - 3 != nnz:
                raise ValueError(f"weight line promises {nnz} entries, has {len(parts) - 3}")
            idx = np.empty(nnz, dtype=np.int64)
            val = np.empty(nnz, dtype=np.float64)
            for t, tok in enumerate(parts[3:]):
                i_s, _, v_s = tok.partition(":")
                idx[t] = int(i_s)
                val[t] = float(v_s)
            out[(a, b)] = WeightVector(dim, idx, val)
    return out


def save_model(model: XmcModel, dirpath) -> None:
    """Write a model as a directory of text files plus a JSON header.

    Weight values are serialized with ``repr`` so reloading reproduces
    the model bit for bit.
    """
    os.makedirs(dirpath, exist_ok=True)
    with open(os.path.join(dirpath, "tree.txt"), "w", encoding="utf-8") as fh:
        fh.write(model.tree.to_text())
    model.assignment.save(os.path.join(dirpath, "assignment.txt"))
    model.initial_assignment.save(os.path.join(dirpath, "assignment_initial.txt"))
    with open(os.path.join(dirpath, "matcher.txt"), "w", encoding="utf-8") as fh:
        _write_weight_lines(
            fh, ((n, c, w) for (n, c), w in sorted(model.matcher.items()))
        )
    with open(os.path.join(dirpath, "ranker.txt"), "w", encoding="utf-8") as fh:
        _write_weight_lines(
            fh, ((l, j, w) for (l, j), w in sorted(model.ranker.items()))
        )
    meta = {
        "n_features": model.n_features,
        "n_labels": model.n_labels,
        "beam": model.beam,
        "overlap_budget": model.assignment.overlap_budget,
        "branching": model.tree.branching,
        "seed": model.seed,
        "score_mode": model.score_mode,
    }
    with open(os.path.join(dirpath, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(dirpath) -> XmcModel:
    """Inverse of :func:`save_model`; validates cross-file consistency."""
    with open(os.path.join(dirpath, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(os.path.join(dirpath, "tree.txt"), "r", encoding="utf-8") as fh:
        tree = LabelTree.from_text(
            fh.read(), branching=meta["branching"], n_labels=meta["n_labels"]
        )
    assignment = ClusterAssignment.load(
        os.path.join(dirpath, "assignment.txt"),
        n_labels=meta["n_labels"],
        n_clusters=tree.n_clusters,
        overlap_budget=meta["overlap_budget"],
    )
    initial = ClusterAssignment.load(
        os.path.join(dirpath, "assignment_initial.txt"),
        n_labels=meta["n_labels"],
        n_clusters=tree.n_clusters,
        overlap_budget=meta["overlap_budget"],
    )
    matcher = _read_weight_lines(os.path.join(dirpath, "matcher.txt"), meta["n_features"])
    ranker = _read_weight_lines(os.path.join(dirpath, "ranker.txt"), meta["n_features"])
    return XmcModel(
        tree=tree,
        matcher=matcher,
        ranker=ranker,
        assignment=assignment,
        initial_assignment=initial,
        beam=meta["beam"],
        n_features=meta["n_features"],
        seed=meta["seed"],
        score_mode=meta["score_mode"],
    )
