"""Label clustering: aggregated label embeddings, balanced spherical
k-means, and the label tree the matcher routes over.

Labels are embedded by summing and normalizing the feature vectors of
their positive instances.  The tree is built by recursive balanced
partitioning of those embeddings; its leaves are the label clusters.
Leaf label sets can be rewritten later (that is how an overlapping
assignment is installed) but the topology of a built tree never
changes.
"""

from __future__ import annotations

import numpy as np

from .dataio import normalize_rows
from .matrices import SparseMatrix, as_matrix, matmul, transpose

__all__ = [
    "pifa_embeddings",
    "balanced_kmeans",
    "build_tree",
    "LabelTree",
]


def pifa_embeddings(x, y) -> tuple[SparseMatrix, np.ndarray]:
    """Aggregate instance features into one unit vector per label.

    Row ``l`` of the result is the normalized sum of the feature rows of
    the instances carrying label ``l``.  Returns the ``L x d`` embedding
    matrix together with a boolean mask flagging labels that have no
    positive instances (their rows are zero and they carry no geometry).
    """
    x = as_matrix(x)
    y = as_matrix(y)
    if x.shape[0] != y.shape[0]:
        raise ValueError(
            f"row count mismatch: X has {x.shape[0]} rows, Y has {y.shape[0]}"
        )
    agg = matmul(transpose(y), x)
    emb = normalize_rows(agg)
    zero = emb.row_nnz() == 0
    return emb, zero


def _unit_rows(dense: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(dense, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return dense / norms


def _group_means(points, assign: np.ndarray, n_groups: int) -> np.ndarray:
    d = points.shape[1]
    means = np.zeros((n_groups, d))
    for g in range(n_groups):
        members = np.flatnonzero(assign == g)
        means[g] = np.asarray(points[members].sum(axis=0)).ravel() / members.size
    return _unit_rows(means)


def _farthest_point_seeds(points, n_seeds: int, rng: np.random.Generator) -> np.ndarray:
    """First seed random, each next one least similar to those chosen.

    Ties resolve to the lowest index, so the choice is deterministic
    once the first draw is fixed.
    """
    n = points.shape[0]
    chosen = [int(rng.integers(0, n))]
    max_sim = np.full(n, -np.inf)
    for _ in range(n_seeds - 1):
        last = np.asarray(points[chosen[-1]].toarray()).ravel()
        max_sim = np.maximum(max_sim, points @ last)
        max_sim[chosen] = np.inf
        chosen.append(int(np.argmin(max_sim)))
    return np.asarray(chosen)


def _balanced_halves(points, rng: np.random.Generator) -> np.ndarray:
    """Split rows into two groups of sizes ceil(n/2) and floor(n/2).

    2-means on the cosine objective, rebalanced every iteration by
    ranking points on the margin between the two centroid similarities.
    Returns a boolean mask marking the first group.
    """
    n = points.shape[0]
    half = (n + 1) // 2
    seed_idx = _farthest_point_seeds(points, 2, rng)
    centroids = _unit_rows(points[seed_idx].toarray())
    side = np.zeros(n, dtype=bool)
    side[:half] = True
    prev = None
    for _ in range(20):
        sims = points @ centroids.T
        margin = sims[:, 0] - sims[:, 1]
        order = np.argsort(-margin, kind="stable")
        side = np.zeros(n, dtype=bool)
        side[order[:half]] = True
        obj = sims[side, 0].sum() + sims[~side, 1].sum()
        if prev is not None and abs(obj - prev) <= 1e-4 * max(1.0, abs(prev)):
            break
        prev = obj
        centroids = _group_means(points, np.where(side, 0, 1), 2)
    return side


def _greedy_capacity_assign(points, n_groups: int, rng: np.random.Generator) -> np.ndarray:
    """Capacity-constrained spherical k-means for a non-power-of-two group count.

    Capacities differ by at most one; points claim groups greedily in
    order of their best similarity, each taking its most similar group
    with spare capacity (ties toward the lower group index).
    """
    n = points.shape[0]
    caps = np.full(n_groups, n // n_groups, dtype=np.int64)
    caps[: n % n_groups] += 1
    seed_idx = _farthest_point_seeds(points, n_groups, rng)
    centroids = _unit_rows(points[seed_idx].toarray())
    assign = np.zeros(n, dtype=np.int64)
    prev = None
    group_ids = np.arange(n_groups)
    for _ in range(20):
        sims = points @ centroids.T
        order = np.argsort(-sims.max(axis=1), kind="stable")
        left = caps.copy()
        for i in order:
            for g in np.lexsort((group_ids, -sims[i])):
                if left[g] > 0:
                    assign[i] = g
                    left[g] -= 1
                    break
        obj = sims[np.arange(n), assign].sum()
        if prev is not None and abs(obj - prev) <= 1e-4 * max(1.0, abs(prev)):
            break
        prev = obj
        centroids = _group_means(points, assign, n_groups)
    return assign


def balanced_kmeans(points, n_groups: int, seed: int = 0) -> np.ndarray:
    """Partition rows of ``points`` into ``n_groups`` groups of near-equal size.

    Points are expected to be unit-normalized; similarity is the plain
    dot product.  Group sizes differ by at most one.  Power-of-two group
    counts use recursive halving; other counts a capacity-constrained
    greedy assignment.  Returns the group index of every row.
    """
    p = as_matrix(points)
    n = p.shape[0]
    if n_groups < 1:
        raise ValueError(f"group count must be at least 1, got {n_groups}")
    if n_groups > n:
        raise ValueError(f"cannot split {n} points into {n_groups} groups")
    rng = np.random.default_rng(seed)
    out = np.zeros(n, dtype=np.int64)
    _assign_recursive(p, np.arange(n), n_groups, rng, out, 0)
    return out


def _assign_recursive(points, idx, n_groups, rng, out, base) -> None:
    if n_groups == 1:
        out[idx] = base
        return
    sub = points[idx]
    if n_groups % 2 == 0 and (n_groups & (n_groups - 1)) == 0:
        first = _balanced_halves(sub, rng)
        _assign_recursive(points, idx[first], n_groups // 2, rng, out, base)
        _assign_recursive(points, idx[~first], n_groups // 2, rng, out, base + n_groups // 2)
    else:
        out[idx] = base + _greedy_capacity_assign(sub, n_groups, rng)


class LabelTree:
    """Rooted tree over label clusters, nodes numbered in breadth-first order.

    Leaves carry disjoint-or-overlapping label sets; internal nodes
    carry none.  The leaf in position ``j`` of :attr:`leaves` is cluster
    ``j`` throughout the package.  Topology is fixed at construction;
    only the leaf label sets may be replaced (see
    :meth:`set_label_sets`).
    """

    def __init__(self, parents, children, leaf_labels, branching: int, n_labels: int):
        self.parents = list(parents)
        self.children = [list(c) for c in children]
        self.leaf_labels = [
            None if l is None else np.asarray(l, dtype=np.int64) for l in leaf_labels
        ]
        self.branching = int(branching)
        self.n_labels = int(n_labels)
        self._validate()

    def _validate(self) -> None:
        n = len(self.parents)
        if not (n == len(self.children) == len(self.leaf_labels)):
            raise ValueError("node arrays disagree in length")
        if n == 0 or self.parents[0] != -1:
            raise ValueError("node 0 must be the root (parent -1)")
        for i in range(1, n):
            p = self.parents[i]
            if not 0 <= p < i:
                raise ValueError(f"node {i} has invalid parent {p} (ids must be breadth-first)")
            if i not in self.children[p]:
                raise ValueError(f"node {i} missing from children of {p}")
        for i in range(n):
            is_leaf = not self.children[i]
            if is_leaf and self.leaf_labels[i] is None:
                raise ValueError(f"leaf {i} has no label set")
            if not is_leaf and self.leaf_labels[i] is not None:
                raise ValueError(f"internal node {i} carries labels")

    @property
    def n_nodes(self) -> int:
        return len(self.parents)

    @property
    def root(self) -> int:
        return 0

    @property
    def leaves(self) -> list[int]:
        """Leaf node ids in breadth-first order; position = cluster id."""
        return [i for i in range(self.n_nodes) if not self.children[i]]

    @property
    def n_clusters(self) -> int:
        return len(self.leaves)

    def depth_of(self, node: int) -> int:
        d = 0
        while self.parents[node] != -1:
            node = self.parents[node]
            d += 1
        return d

    @property
    def depth(self) -> int:
        return max(self.depth_of(i) for i in range(self.n_nodes))

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    def label_sets(self) -> list[np.ndarray]:
        """Per-cluster label sets, in cluster id order (copies)."""
        return [self.leaf_labels[i].copy() for i in self.leaves]

    def set_label_sets(self, sets) -> None:
        """Replace every leaf label set, keeping the topology.

        ``sets`` must hold one sorted array per cluster, in cluster id
        order, and cover all labels between them.  This is the hook an
        overlapping cluster assignment is installed through.
        """
        leaves = self.leaves
        if len(sets) != len(leaves):
            raise ValueError(f"expected {len(leaves)} label sets, got {len(sets)}")
        arrays = []
        covered = np.zeros(self.n_labels, dtype=bool)
        for s in sets:
            arr = np.asarray(s, dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_labels):
                raise ValueError("label id out of range in replacement set")
            if np.any(np.diff(arr) <= 0):
                raise ValueError("replacement label sets must be sorted and duplicate-free")
            covered[arr] = True
            arrays.append(arr)
        if not covered.all():
            missing = int(np.flatnonzero(~covered)[0])
            raise ValueError(f"replacement sets do not cover label {missing}")
        for node, arr in zip(leaves, arrays):
            self.leaf_labels[node] = arr

    def labels_under(self, node: int) -> np.ndarray:
        """Sorted union of the label sets of all leaves below ``node``."""
        stack = [node]
        parts = []
        while stack:
            cur = stack.pop()
            if self.is_leaf(cur):
                parts.append(self.leaf_labels[cur])
            else:
                stack.extend(self.children[cur])
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def levels(self) -> list[list[int]]:
        """Node ids grouped by depth, shallowest first."""
        out: list[list[int]] = []
        for i in range(self.n_nodes):
            d = self.depth_of(i)
            while len(out) <= d:
                out.append([])
            out[d].append(i)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelTree):
            return NotImplemented
        return (
            self.parents == other.parents
            and self.children == other.children
            and self.branching == other.branching
            and self.n_labels == other.n_labels
            and all(
                (a is None and b is None)
                or (a is not None and b is not None and np.array_equal(a, b))
                for a, b in zip(self.leaf_labels, other.leaf_labels)
            )
        )

    def to_text(self) -> str:
        """One line per node: ``id parent children | labels`` ('-' when empty)."""
        lines = []
        for i in range(self.n_nodes):
            kids = ",".join(str(c) for c in self.children[i]) or "-"
            if self.leaf_labels[i] is None:
                labs = "-"
            else:
                labs = ",".join(str(l) for l in self.leaf_labels[i]) or "-"
            lines.append(f"{i} {self.parents[i]} {kids} | {labs}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(
        cls, text: str, branching: int | None = None, n_labels: int | None = None
    ) -> "LabelTree":
        parents, children, leaf_labels = [], [], []
        rows = [ln for ln in text.splitlines() if ln.strip()]
        for expect, line in enumerate(rows):
            left, sep, labs = line.partition("|")
            if not sep:
                raise ValueError(f"malformed tree line {line!r}")
            parts = left.split()
            if len(parts) != 3:
                raise ValueError(f"malformed tree line {line!r}")
            node, parent, kids = int(parts[0]), int(parts[1]), parts[2]
            if node != expect:
                raise ValueError(f"node ids out of order at {line!r}")
            parents.append(parent)
            kid_list = [] if kids == "-" else [int(t) for t in kids.split(",")]
            children.append(kid_list)
            labs = labs.strip()
            if kid_list:
                leaf_labels.append(None)
            else:
                leaf_labels.append(
                    np.empty(0, dtype=np.int64)
                    if labs == "-"
                    else np.asarray([int(t) for t in labs.split(",")], dtype=np.int64)
                )
        if n_labels is None:
            all_labels = np.concatenate(
                [l for l in leaf_labels if l is not None and l.size]
                or [np.empty(0, dtype=np.int64)]
            )
            n_labels = int(all_labels.max()) + 1 if all_labels.size else 0
        if branching is None:
            branching = max((len(c) for c in children), default=0)
        return cls(parents, children, leaf_labels, branching, n_labels)


def build_tree(label_embs, branching: int, max_leaf_size: int, seed: int = 0) -> LabelTree:
    """Recursively partition labels into a balanced tree.

    Every node holding more than ``max_leaf_size`` labels is split into
    ``min(branching, ceil(count / max_leaf_size))`` near-equal groups by
    balanced k-means on the label embeddings.  Labels with zero
    embeddings carry no geometry, so they are dealt one at a time to the
    smallest group of their node.  A single breadth-first pass numbers
    the nodes, which makes the construction deterministic for a fixed
    seed.
    """
    emb = as_matrix(label_embs)
    n_labels = emb.shape[0]
    if n_labels < 1:
        raise ValueError("need at least one label")
    if branching < 2:
        raise ValueError(f"branching must be at least 2, got {branching}")
    if max_leaf_size < 1:
        raise ValueError(f"max leaf size must be at least 1, got {max_leaf_size}")
    rng = np.random.default_rng(seed)
    zero = emb.row_nnz() == 0

    parents: list[int] = [-1]
    children: list[list[int]] = [[]]
    leaf_labels: list[np.ndarray | None] = [None]
    queue: list[tuple[int, np.ndarray]] = [(0, np.arange(n_labels, dtype=np.int64))]
    while queue:
        node, labels = queue.pop(0)
        if labels.size <= max_leaf_size:
            leaf_labels[node] = np.sort(labels)
            continue
        n_children = min(branching, -(-labels.size // max_leaf_size))
        groups = _split_labels(emb, labels, zero, n_children, rng)
        for g in groups:
            child = len(parents)
            parents.append(node)
            children.append([])
            leaf_labels.append(None)
            children[node].append(child)
            queue.append((child, g))
    return LabelTree(parents, children, leaf_labels, branching, n_labels)


def _split_labels(emb, labels, zero, n_children, rng) -> list[np.ndarray]:
    """Split a label set into ``n_children`` groups of near-equal size."""
    nz = labels[~zero[labels]]
    z = labels[zero[labels]]
    if nz.size >= n_children:
        sub_seed = int(rng.integers(0, 2**31 - 1))
        assign = balanced_kmeans(emb[nz], n_children, seed=sub_seed)
        groups = [list(nz[assign == g]) for g in range(n_children)]
    else:
        groups = [[] for _ in range(n_children)]
        for j, lab in enumerate(nz):
            groups[j].append(int(lab))
    # geometry-free labels go to the currently smallest group
    for lab in z:
        sizes = [len(g) for g in groups]
        groups[int(np.argmin(sizes))].append(int(lab))
    return [np.asarray(sorted(g), dtype=np.int64) for g in groups]
