"""Synthetic corpora with deliberately multi-modal labels.

Real label spaces hide labels whose positive instances split into
unrelated modes.  To study that controllably, these helpers fuse groups
of ``k`` original labels into single labels (three grouping regimes of
increasing semantic damage) and build small corpora where every fused
label has a known number of planted modes, so per-mode behavior can be
measured exactly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .cluster import balanced_kmeans, pifa_embeddings
from .dataio import Dataset, normalize_rows
from .matrices import SparseMatrix, binarize, from_dense, matmul

__all__ = [
    "FusionSpec",
    "fuse_labels",
    "save_fusion_mapping",
    "load_fusion_mapping",
    "make_bimodal_toy",
    "make_fused_corpus",
]

from dataclasses import dataclass


@dataclass(frozen=True)
class FusionSpec:
    """How to merge original labels: grouping mode, group width, seed.

    ``easy`` groups semantically close labels (balanced k-means on the
    label embeddings), ``medium`` clusters coarsely then shuffles within
    clusters of ``scramble_width * merge_k`` labels, and ``hard``
    shuffles all labels uniformly before chunking, producing maximally
    incoherent fusions.
    """

    mode: str
    merge_k: int
    seed: int = 0
    scramble_width: int = 32

    def __post_init__(self):
        if self.mode not in ("easy", "medium", "hard"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.merge_k < 2:
            raise ValueError(f"merge width must be at least 2, got {self.merge_k}")


def _hard_groups(n_labels: int, merge_k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random chunking; returns the group id of every label."""
    perm = rng.permutation(n_labels)
    group_of = np.empty(n_labels, dtype=np.int64)
    for g, start in enumerate(range(0, n_labels, merge_k)):
        group_of[perm[start : start + merge_k]] = g
    return group_of


def _easy_groups(data: Dataset, merge_k: int, rng: np.random.Generator) -> np.ndarray:
    emb, _ = pifa_embeddings(data.X, data.Y)
    n_groups = -(-data.n_labels // merge_k)
    return balanced_kmeans(emb, n_groups, seed=int(rng.integers(0, 2**31 - 1)))


def _medium_groups(data: Dataset, merge_k: int, width: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Coarse k-means clusters, then random ``merge_k``-chunks inside each."""
    n_labels = data.n_labels
    if n_labels < width * merge_k:
        raise ValueError(
            f"medium fusion needs at least {width * merge_k} labels, have {n_labels}"
        )
    emb, _ = pifa_embeddings(data.X, data.Y)
    n_coarse = -(-n_labels // (width * merge_k))
    coarse = balanced_kmeans(emb, n_coarse, seed=int(rng.integers(0, 2**31 - 1)))
    group_of = np.empty(n_labels, dtype=np.int64)
    next_group = 0
    for c in range(n_coarse):
        members = np.flatnonzero(coarse == c)
        members = members[rng.permutation(members.size)]
        for start in range(0, members.size, merge_k):
            group_of[members[start : start + merge_k]] = next_group
            next_group += 1
    return group_of


def fuse_labels(data: Dataset, spec: FusionSpec) -> tuple[Dataset, np.ndarray]:
    """Merge labels into groups of ``merge_k``; instances keep features.

    Returns the fused dataset and the mapping array giving every
    original label's fused id.  An instance is positive for a fused
    label when it was positive for any member.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "hard":
        group_of = _hard_groups(data.n_labels, spec.merge_k, rng)
    elif spec.mode == "easy":
        group_of = _easy_groups(data, spec.merge_k, rng)
    else:
        group_of = _medium_groups(data, spec.merge_k, spec.scramble_width, rng)
    n_fused = int(group_of.max()) + 1
    member = sp.coo_matrix(
        (
            np.ones(data.n_labels),
            (np.arange(data.n_labels), group_of),
        ),
        shape=(data.n_labels, n_fused),
    )
    fused_y = binarize(matmul(data.Y, SparseMatrix(member)))
    return Dataset(X=data.X, Y=fused_y), group_of


def save_fusion_mapping(group_of: np.ndarray, path) -> None:
    """Write ``fused_id: orig,orig,...`` lines, fused ids ascending."""
    n_fused = int(group_of.max()) + 1
    with open(path, "w", encoding="utf-8") as fh:
        for g in range(n_fused):
            members = np.flatnonzero(group_of == g)
            fh.write(f"{g}: {','.join(str(m) for m in members)}\n")


def load_fusion_mapping(path) -> np.ndarray:
    groups: dict[int, list[int]] = {}
    n_labels = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh.read().splitlines():
            if not line:
                continue
            head, _, tail = line.partition(":")
            g = int(head)
            members = [int(t) for t in tail.strip().split(",") if t]
            groups[g] = members
            n_labels = max(n_labels, max(members) + 1)
    group_of = np.empty(n_labels, dtype=np.int64)
    for g, members in groups.items():
        group_of[members] = g
    return group_of


def make_bimodal_toy(n_per_mode: int = 40, d: int = 24, seed: int = 0) -> tuple[Dataset, dict]:
    """Two-mode corpus around one fused label, modes in disjoint feature halves.

    Mode A (majority) occupies the lower feature half: label 0's
    positives there carry the mode context feature plus a signature
    feature, and labels 1..3 are distractors with signatures of their
    own.  Mode B (minority, half as many instances) occupies the upper
    half, and label 0's side of it, one instance in four, is
    deliberately hard: those positives carry only the mode context
    feature, while the mode-B distractors (labels 4..6) are
    context-dominant and add an instance-specific feature each.  A ranker local to mode B can still
    tell the pure-context positives from the distractors, but a
    classifier that must also serve the far more numerous context-heavy
    distractor negatives cannot afford to, which is what starves the
    minority sense under a single-cluster placement.  Because the halves
    share no features, the label embedding of the fused label sits
    between the modes while every distractor sits cleanly in its own
    mode.

    Returns the dataset and a dict with the instance index arrays per
    mode and per role (``fused_a``, ``distract_a``, ``fused_b``,
    ``distract_b``) plus ``modes`` mapping each instance to "a" or "b".
    """
    if d < 10:
        raise ValueError(f"need at least 10 features, got {d}")
    if n_per_mode < 8:
        raise ValueError(f"need at least 8 instances per mode, got {n_per_mode}")
    rng = np.random.default_rng(seed)
    half = d // 2
    n_a = n_per_mode
    n_b = n_per_mode // 2
    rows = []
    labels = []
    roles = {"fused_a": [], "distract_a": [], "fused_b": [], "distract_b": []}
    modes = []

    def add_instance(x, label, role, mode):
        roles[role].append(len(rows))
        modes.append(mode)
        rows.append(x)
        labels.append(label)

    for i in range(n_a):
        x = np.zeros(d)
        x[0] = 1.0
        if i % 2 == 0:
            x[1] = 1.0 + 0.1 * rng.random()
            add_instance(x, 0, "fused_a", "a")
        else:
            dlab = 1 + (i // 2) % 3
            x[2 + (dlab - 1)] = 1.0 + 0.1 * rng.random()
            add_instance(x, dlab, "distract_a", "a")
    uniq = 0
    for i in range(n_b):
        x = np.zeros(d)
        if i % 4 == 0:
            x[half] = 1.0
            add_instance(x, 0, "fused_b", "b")
        else:
            x[half] = 2.0
            x[half + 1 + uniq % (d - half - 1)] = 1.0 + 0.1 * rng.random()
            uniq += 1
            add_instance(x, 4 + (i % 3), "distract_b", "b")

    x = normalize_rows(from_dense(np.asarray(rows)))
    y = np.zeros((len(rows), 7))
    y[np.arange(len(rows)), labels] = 1.0
    info = {k: np.asarray(v, dtype=np.int64) for k, v in roles.items()}
    info["modes"] = np.asarray(modes)
    return Dataset(X=x, Y=from_dense(y)), info


def make_fused_corpus(n: int = 5000, n_fused: int = 500, merge_k: int = 5,
                      seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Corpus whose fused labels each hide exactly two planted modes.

    Starts from ``n_fused * merge_k`` original labels.  A uniformly
    random ``merge_k``-chunking (the hard fusion regime) fixes the
    groups; in each group two members become modes and receive
    instances, the rest stay empty.  Every mode owns one signature
    feature, so original labels are perfectly separable while fused
    labels are two-modal by construction.  Instances are dealt
    round-robin over the ``2 * n_fused`` modes.

    Returns the fused dataset and the original-to-fused mapping.
    """
    rng = np.random.default_rng(seed)
    n_orig = n_fused * merge_k
    group_of = _hard_groups(n_orig, merge_k, rng)
    active: list[int] = []
    for g in range(n_fused):
        members = np.flatnonzero(group_of == g)
        picked = rng.choice(members.size, size=2, replace=False)
        active.extend(int(members[p]) for p in sorted(picked))
    n_modes = len(active)
    d = n_modes + 8
    x_rows = []
    x_cols = []
    x_vals = []
    y_rows = []
    y_cols = []
    for i in range(n):
        mode = i % n_modes
        orig = active[mode]
        x_rows.extend([i, i])
        x_cols.extend([mode, n_modes + int(rng.integers(0, 8))])
        x_vals.extend([1.0, 0.3 + 0.1 * rng.random()])
        y_rows.append(i)
        y_cols.append(orig)
    x = SparseMatrix(sp.coo_matrix((x_vals, (x_rows, x_cols)), shape=(n, d)))
    y = SparseMatrix(
        sp.coo_matrix((np.ones(n), (y_rows, y_cols)), shape=(n, n_orig))
    )
    base = Dataset(X=normalize_rows(x), Y=y)
    fused, mapping = fuse_labels(
        base, FusionSpec(mode="hard", merge_k=merge_k, seed=seed)
    )
    # a fresh generator from the same seed replays the exact grouping the
    # modes were planted against; anything else would invalidate the corpus
    assert np.array_equal(mapping, group_of)
    return fused, mapping
