"""Sparse linear binary classifiers trained by dual coordinate descent.

Each classifier minimizes the L2-regularized squared hinge loss

    0.5 * ||w||^2 + C * sum_i max(0, 1 - y_i w.x_i)^2

by coordinate descent on the dual, visiting instances in a freshly
shuffled order every epoch.  Trained weights are pruned to entries
whose magnitude clears a threshold and stored sparsely.  The logistic
squashing applied at inference lives here too; training itself never
uses it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .matrices import as_matrix

__all__ = [
    "TrainProblem",
    "WeightVector",
    "train_ovr",
    "primal_objective",
    "score",
    "stack_weights",
    "sigmoid",
]


@dataclass
class TrainProblem:
    """One binary subproblem: positive and negative instance ids over ``x``.

    ``positives`` and ``negatives`` index rows of ``x`` and must be
    disjoint; positives must be nonempty (a classifier with no positive
    examples is meaningless, callers substitute an empty weight vector
    instead of training).  ``seed`` drives the per-epoch shuffle.
    """

    x: object
    positives: np.ndarray
    negatives: np.ndarray
    reg_c: float = 1.0
    weight_threshold: float = 0.1
    tol: float = 1e-3
    max_iter: int = 100
    seed: int = 0

    def __post_init__(self):
        self.positives = np.asarray(self.positives, dtype=np.int64)
        self.negatives = np.asarray(self.negatives, dtype=np.int64)
        if self.positives.size == 0:
            raise ValueError("training problem has no positive instances")
        if np.intersect1d(self.positives, self.negatives).size:
            raise ValueError("positives and negatives overlap")
        if self.reg_c <= 0:
            raise ValueError(f"regularization C must be positive, got {self.reg_c}")


@dataclass(frozen=True)
class WeightVector:
    """Sparse weight vector: sorted feature indices and their values."""

    dim: int
    idx: np.ndarray
    val: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "WeightVector":
        return cls(dim, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    @classmethod
    def from_dense(cls, w: np.ndarray, threshold: float = 0.0) -> "WeightVector":
        keep = np.flatnonzero(np.abs(w) > threshold)
        return cls(w.size, keep.astype(np.int64), w[keep].astype(np.float64))

    @property
    def nnz(self) -> int:
        return self.idx.size

    def to_dense(self) -> np.ndarray:
        w = np.zeros(self.dim)
        w[self.idx] = self.val
        return w


@njit(cache=True, nogil=True)
def _dcd_epochs(data, indices, indptr, y, n_features, reg_c, tol, max_iter, seed):
    n = y.size
    w = np.zeros(n_features)
    alpha = np.zeros(n)
    diag = 0.5 / reg_c
    qii = np.empty(n)
    for i in range(n):
        s = diag
        for t in range(indptr[i], indptr[i + 1]):
            s += data[t] * data[t]
        qii[i] = s
    np.random.seed(seed)
    order = np.arange(n)
    for _ in range(max_iter):
        for i in range(n - 1, 0, -1):
            j = np.random.randint(0, i + 1)
            tmp = order[i]
            order[i] = order[j]
            order[j] = tmp
        max_violation = 0.0
        for t in range(n):
            i = order[t]
            lo, hi = indptr[i], indptr[i + 1]
            dot = 0.0
            for u in range(lo, hi):
                dot += w[indices[u]] * data[u]
            grad = y[i] * dot - 1.0 + alpha[i] * diag
            if alpha[i] == 0.0:
                projected = min(grad, 0.0)
            else:
                projected = grad
            if abs(projected) > max_violation:
                max_violation = abs(projected)
            if projected != 0.0:
                new_alpha = alpha[i] - grad / qii[i]
                if new_alpha < 0.0:
                    new_alpha = 0.0
                delta = (new_alpha - alpha[i]) * y[i]
                if delta != 0.0:
                    alpha[i] = new_alpha
                    for u in range(lo, hi):
                        w[indices[u]] += delta * data[u]
        if max_violation < tol:
            break
    return w


def train_ovr(problem: TrainProblem) -> WeightVector:
    """Train one binary classifier and return its pruned sparse weights."""
    x = as_matrix(problem.x)
    rows = np.concatenate([problem.positives, problem.negatives])
    sub = x[rows]
    y = np.concatenate(
        [
            np.ones(problem.positives.size),
            -np.ones(problem.negatives.size),
        ]
    )
    w = _dcd_epochs(
        sub.data,
        sub.indices,
        sub.indptr,
        y,
        x.shape[1],
        float(problem.reg_c),
        float(problem.tol),
        int(problem.max_iter),
        int(problem.seed) & 0x7FFFFFFF,
    )
    return WeightVector.from_dense(w, problem.weight_threshold)


def primal_objective(problem: TrainProblem, w: np.ndarray) -> float:
    """Regularized squared-hinge objective of dense weights on a problem."""
    x = as_matrix(problem.x)
    rows = np.concatenate([problem.positives, problem.negatives])
    y = np.concatenate(
        [np.ones(problem.positives.size), -np.ones(problem.negatives.size)]
    )
    margins = 1.0 - y * (x[rows] @ w)
    hinge = np.maximum(margins, 0.0)
    return 0.5 * float(w @ w) + problem.reg_c * float(hinge @ hinge)


def score(w: WeightVector, x_row) -> float:
    """Raw (unsquashed) dot product of a sparse weight vector and one row."""
    if w.idx.size == 0:
        return 0.0
    x_row = as_matrix(x_row)
    cols = x_row.indices
    pos = np.searchsorted(w.idx, cols)
    inside = pos < w.idx.size
    match = np.zeros(cols.size, dtype=bool)
    match[inside] = w.idx[pos[inside]] == cols[inside]
    return float(w.val[pos[match]] @ x_row.data[match])


def stack_weights(weights, dim: int) -> sp.csr_matrix:
    """Stack weight vectors into one CSR matrix, one row per classifier."""
    indptr = np.zeros(len(weights) + 1, dtype=np.int64)
    for i, w in enumerate(weights):
        indptr[i + 1] = indptr[i] + w.nnz
    if weights:
        indices = np.concatenate([w.idx for w in weights])
        data = np.concatenate([w.val for w in weights])
    else:
        indices = np.empty(0, dtype=np.int64)
        data = np.empty(0, dtype=np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(len(weights), dim))


def sigmoid(v):
    """Numerically stable logistic function, applied only at inference."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out
