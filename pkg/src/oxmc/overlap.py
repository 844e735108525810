"""Overlapping cluster assignment driven by matcher statistics.

A cluster assignment is a binary L x K matrix: row l marks the clusters
label l lives in.  Tree building yields one cluster per label; this
module improves on that by letting a label occupy up to ``budget``
clusters, chosen to maximize the number of (instance, label) pairs the
matcher can still reach.  The exact reachability count fixes the
assignment inside a binarized trace, which is hard to optimize, so the
relaxed count drops the binarization and becomes linear in the
assignment; the relaxed optimum is then simply, per label, the
``budget`` clusters with the largest match mass, computed in closed
form by a row-wise top-k selection.  A capacity-constrained variant
bounds how many labels any one cluster may take on.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

from .matrices import (
    SparseMatrix,
    as_matrix,
    binarize,
    matmul,
    row_top_k,
    trace_product,
    transpose,
)

__all__ = [
    "ClusterAssignment",
    "match_mass",
    "objective_binary",
    "objective_relaxed",
    "project_assignment",
    "solve_rlap_greedy",
    "default_capacity",
    "random_duplicate",
    "brute_force_optimal",
    "enumerate_partitions_objective",
]


class ClusterAssignment:
    """Binary label-to-cluster incidence matrix with a row budget.

    Invariants: every label sits in at least one cluster and in at most
    ``overlap_budget`` of them.  ``provenance`` records which procedure
    produced the assignment (useful in logs and model metadata, never
    consulted by algorithms).
    """

    def __init__(self, matrix, overlap_budget: int, provenance: str = "unknown"):
        self.matrix = as_matrix(matrix)
        self.overlap_budget = int(overlap_budget)
        self.provenance = str(provenance)
        self._validate()

    def _validate(self) -> None:
        m = self.matrix
        if self.overlap_budget < 1:
            raise ValueError(f"overlap budget must be at least 1, got {self.overlap_budget}")
        if m.data.size and not np.all(m.data == 1.0):
            raise ValueError("assignment matrix must be binary")
        counts = m.row_nnz()
        if np.any(counts == 0):
            bad = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"label {bad} is assigned to no cluster")
        if np.any(counts > self.overlap_budget):
            bad = int(np.flatnonzero(counts > self.overlap_budget)[0])
            raise ValueError(
                f"label {bad} sits in {int(counts[bad])} clusters, budget is {self.overlap_budget}"
            )

    @property
    def n_labels(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.matrix.shape[1]

    @property
    def total_slots(self) -> int:
        """Stored coordinates; equals the number of ranker classifiers."""
        return int(self.matrix.nnz)

    def column_support(self, cluster: int) -> np.ndarray:
        """Sorted label ids assigned to one cluster."""
        col = self.matrix.getcol(cluster).tocoo()
        return np.sort(col.row.astype(np.int64))

    def label_sets(self) -> list[np.ndarray]:
        """Per-cluster sorted label sets (the tree leaf sets it induces)."""
        csc = self.matrix.tocsc()
        return [
            np.sort(csc.indices[csc.indptr[j] : csc.indptr[j + 1]].astype(np.int64))
            for j in range(self.n_clusters)
        ]

    def to_pairs(self) -> list[tuple[int, int]]:
        """(label, cluster) coordinates in row-major order."""
        coo = self.matrix.tocoo()
        return sorted(zip(coo.row.astype(int), coo.col.astype(int)))

    def clusters_of(self, label: int) -> np.ndarray:
        m = self.matrix
        return m.col_idx[m.row_ptr[label] : m.row_ptr[label + 1]].astype(np.int64)

    @classmethod
    def from_pairs(cls, pairs, n_labels: int, n_clusters: int,
                   overlap_budget: int, provenance: str = "unknown") -> "ClusterAssignment":
        pairs = list(pairs)
        rows = [p[0] for p in pairs]
        cols = [p[1] for p in pairs]
        mat = sp.coo_matrix(
            (np.ones(len(pairs)), (rows, cols)), shape=(n_labels, n_clusters)
        )
        return cls(mat, overlap_budget, provenance)

    @classmethod
    def from_label_sets(cls, sets, n_labels: int, overlap_budget: int,
                        provenance: str = "initial-partition") -> "ClusterAssignment":
        pairs = [(int(l), j) for j, labels in enumerate(sets) for l in labels]
        return cls.from_pairs(pairs, n_labels, len(sets), overlap_budget, provenance)

    def save(self, path) -> None:
        """One ``label cluster`` line per stored coordinate, row-major."""
        with open(path, "w", encoding="utf-8") as fh:
            for l, j in self.to_pairs():
                fh.write(f"{l} {j}\n")

    @classmethod
    def load(cls, path, n_labels: int, n_clusters: int, overlap_budget: int,
             provenance: str = "loaded") -> "ClusterAssignment":
        pairs = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh.read().splitlines():
                if not line:
                    continue
                a, b = line.split()
                pairs.append((int(a), int(b)))
        return cls.from_pairs(pairs, n_labels, n_clusters, overlap_budget, provenance)

    def __eq__(self, other):
        if not isinstance(other, ClusterAssignment):
            return NotImplemented
        from .matrices import equal

        return (
            equal(self.matrix, other.matrix)
            and self.overlap_budget == other.overlap_budget
        )


def match_mass(y, m) -> SparseMatrix:
    """L x K matrix counting, per (label, cluster), the positive instances
    of the label that the matcher routed to the cluster.

    This is the gradient of the relaxed objective in the assignment and
    the only statistic the closed-form update needs.
    """
    y = as_matrix(y)
    m = as_matrix(m)
    if y.shape[0] != m.shape[0]:
        raise ValueError(
            f"instance count mismatch: labels {y.shape[0]}, matches {m.shape[0]}"
        )
    return matmul(transpose(y), m)


def objective_binary(y, m, assignment: ClusterAssignment) -> int:
    """Exact count of (instance, label) pairs reachable through matching.

    A pair counts when at least one cluster both contains the label and
    was matched for the instance.  This is what precision-oriented
    metrics are bounded by; the relaxed objective upper-bounds it by
    counting every such cluster instead of at most one.
    """
    y = as_matrix(y)
    m = as_matrix(m)
    reach = binarize(matmul(m, transpose(assignment.matrix)))
    return trace_product(y, reach)


def objective_relaxed(y, m, assignment: ClusterAssignment) -> float:
    """Sum of match mass over the assignment's coordinates (linear form)."""
    g = match_mass(y, m)
    return float(g.multiply(assignment.matrix).sum())


def project_assignment(y, m, budget: int,
                       fallback: ClusterAssignment | None = None) -> ClusterAssignment:
    """Closed-form maximizer of the relaxed objective under the row budget.

    Per label: keep the ``budget`` clusters with the largest match mass
    (ties toward the lower cluster id).  Labels whose mass is entirely
    zero get no guidance from the matcher; they keep their clusters from
    ``fallback`` when one is given (capped at the budget) and otherwise
    default to cluster 0, so coverage always holds.
    """
    if budget < 1:
        raise ValueError(f"overlap budget must be at least 1, got {budget}")
    g = match_mass(y, m)
    chosen = row_top_k(g, budget)
    rows = []
    cols = []
    coo = chosen.tocoo()
    rows.extend(coo.row.astype(int))
    cols.extend(coo.col.astype(int))
    empty = np.flatnonzero(chosen.row_nnz() == 0)
    for l in empty:
        if fallback is not None:
            keep = fallback.clusters_of(int(l))[:budget]
        else:
            keep = [0]
        for j in keep:
            rows.append(int(l))
            cols.append(int(j))
    mat = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=g.shape)
    return ClusterAssignment(mat, budget, provenance="projection")


def default_capacity(n_labels: int, n_clusters: int) -> int:
    """Per-cluster label capacity leaving 50% slack over a perfect spread."""
    return int(np.ceil(1.5 * n_labels / n_clusters))


def solve_rlap_greedy(y, m, budget: int, capacity: int,
                      fallback: ClusterAssignment | None = None) -> ClusterAssignment:
    """Greedy assignment under both the row budget and a column capacity.

    Entries of the match mass are taken in order of decreasing value
    (ties toward the lower label, then cluster id).  An entry is
    accepted if its label has budget left, its cluster has capacity
    left, and acceptance does not make covering the still-uncovered
    labels impossible.  Labels left uncovered afterwards take their
    best cluster with spare capacity, falling back to the least-loaded
    cluster.  The result is feasible whenever ``capacity * K >= L``;
    with ``capacity >= L`` the constraint is inactive and the result
    matches the unconstrained projection.
    """
    if budget < 1:
        raise ValueError(f"overlap budget must be at least 1, got {budget}")
    if capacity < 1:
        raise ValueError(f"cluster capacity must be at least 1, got {capacity}")
    g = match_mass(y, m)
    n_labels, n_clusters = g.shape
    if capacity * n_clusters < n_labels:
        raise ValueError(
            f"capacity {capacity} x {n_clusters} clusters cannot cover {n_labels} labels"
        )
    coo = g.tocoo()
    order = np.lexsort((coo.col, coo.row, -coo.data))
    row_left = np.full(n_labels, budget, dtype=np.int64)
    col_left = np.full(n_clusters, capacity, dtype=np.int64)
    covered = np.zeros(n_labels, dtype=bool)
    uncovered = n_labels
    taken: list[tuple[int, int]] = []
    for t in order:
        l, j, v = int(coo.row[t]), int(coo.col[t]), float(coo.data[t])
        if v <= 0.0:
            break
        if row_left[l] == 0 or col_left[j] == 0:
            continue
        covers = not covered[l]
        # reserve one slot per still-uncovered label: spending a slot on an
        # already-covered label must not strand a label with no cluster
        slack = int(col_left.sum()) - uncovered
        if not covers and slack < 1:
            continue
        taken.append((l, j))
        row_left[l] -= 1
        col_left[j] -= 1
        if covers:
            covered[l] = True
            uncovered -= 1
    for l in np.flatnonzero(~covered):
        l = int(l)
        mass_row = g.getrow(l).tocoo()
        candidates = sorted(
            zip(mass_row.col.astype(int), mass_row.data), key=lambda t: (-t[1], t[0])
        )
        choice = None
        for j, v in candidates:
            if v > 0 and col_left[j] > 0:
                choice = j
                break
        if choice is None and fallback is not None:
            for j in fallback.clusters_of(l):
                if col_left[int(j)] > 0:
                    choice = int(j)
                    break
        if choice is None:
            spare = np.flatnonzero(col_left > 0)
            loads = capacity - col_left[spare]
            choice = int(spare[np.lexsort((spare, loads))[0]])
        taken.append((l, choice))
        col_left[choice] -= 1
    mat = sp.coo_matrix(
        (np.ones(len(taken)), ([t[0] for t in taken], [t[1] for t in taken])),
        shape=(n_labels, n_clusters),
    )
    return ClusterAssignment(mat, budget, provenance="capacity-greedy")


def random_duplicate(initial: ClusterAssignment, budget: int, seed: int = 0) -> ClusterAssignment:
    """Duplicate every label into one extra uniformly random other cluster.

    Baseline for the guided update: same slot growth, no match
    statistics.  Requires a single-cluster initial assignment, at least
    two clusters, and a budget of at least 2.
    """
    if budget < 2:
        raise ValueError(f"duplication needs a budget of at least 2, got {budget}")
    if initial.n_clusters < 2:
        raise ValueError("duplication needs at least two clusters")
    if np.any(initial.matrix.row_nnz() != 1):
        raise ValueError("initial assignment must place every label in exactly one cluster")
    rng = np.random.default_rng(seed)
    pairs = []
    for l in range(initial.n_labels):
        home = int(initial.clusters_of(l)[0])
        extra = int(rng.integers(0, initial.n_clusters - 1))
        if extra >= home:
            extra += 1
        pairs.append((l, home))
        pairs.append((l, extra))
    return ClusterAssignment.from_pairs(
        pairs, initial.n_labels, initial.n_clusters, budget,
        provenance="random-duplication",
    )


def brute_force_optimal(y, m, budget: int) -> tuple[ClusterAssignment, float]:
    """Exhaustive maximizer of the relaxed objective under the row budget.

    Enumerates every nonempty cluster subset of size up to ``budget``
    per label, independently, since the relaxed objective separates
    across rows.  Intended for tiny instances in tests.
    """
    if budget < 1:
        raise ValueError(f"overlap budget must be at least 1, got {budget}")
    g = match_mass(y, m)
    n_labels, n_clusters = g.shape
    dense = g.toarray()
    pairs = []
    total = 0.0
    for l in range(n_labels):
        best_val = -1.0
        best_set: tuple[int, ...] | None = None
        for size in range(1, budget + 1):
            for combo in itertools.combinations(range(n_clusters), size):
                val = float(dense[l, list(combo)].sum())
                if val > best_val:
                    best_val = val
                    best_set = combo
        total += best_val
        pairs.extend((l, j) for j in best_set)
    assignment = ClusterAssignment.from_pairs(
        pairs, n_labels, n_clusters, budget, provenance="brute-force"
    )
    return assignment, total


def enumerate_partitions_objective(y, m, max_states: int = 10**6) -> int:
    """Best exact reachability count over all single-cluster assignments.

    Walks every way of placing each label in exactly one cluster (K^L
    assignments) and returns the maximum binary objective.  The
    overlapping optimum is provably at least this good; tests use this
    as the comparison point.  Guarded against blowup via ``max_states``.
    """
    y = as_matrix(y)
    m = as_matrix(m)
    n_labels = y.shape[1]
    n_clusters = m.shape[1]
    states = n_clusters**n_labels
    if states > max_states:
        raise ValueError(
            f"{n_clusters}^{n_labels} single-cluster assignments exceed the {max_states} guard"
        )
    y_coo = y.tocoo()
    pair_i = y_coo.row.astype(np.int64)
    pair_l = y_coo.col.astype(np.int64)
    m_dense = m.toarray() > 0
    best = 0
    for code in range(states):
        digits = (code // n_clusters ** np.arange(n_labels)) % n_clusters
        reached = m_dense[pair_i, digits[pair_l]]
        best = max(best, int(reached.sum()))
    return best
