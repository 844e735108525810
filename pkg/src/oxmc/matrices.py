"""Canonical sparse matrices and the handful of operations the
classifier stack is built from.

Everything downstream (label trees, match matrices, cluster
assignments) manipulates row-major sparse matrices through this module.
Matrices are kept in canonical CSR form at all times: column indices
strictly ascending within each row, no duplicate coordinates, no
explicitly stored zeros, float64 values.  Canonical form is what makes
structural equality checks and text serialization deterministic.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ShapeError",
    "SparseMatrix",
    "as_matrix",
    "from_dense",
    "identity",
    "matmul",
    "transpose",
    "binarize",
    "trace_product",
    "row_top_k",
    "equal",
]


class ShapeError(ValueError):
    """Operand shapes do not line up for the requested operation."""


class SparseMatrix(sp.csr_matrix):
    """CSR matrix normalized to canonical form on construction.

    Accepts anything ``scipy.sparse.csr_matrix`` accepts (dense arrays,
    other sparse matrices, ``(data, indices, indptr)`` triples, COO-style
    ``(data, (rows, cols))`` pairs).  Values are coerced to float64.
    """

    def __init__(self, arg1, shape=None, dtype=None, copy=False):
        super().__init__(arg1, shape=shape, dtype=dtype, copy=copy)
        if self.data.dtype != np.float64:
            self.data = self.data.astype(np.float64)
        self.sum_duplicates()
        self.sort_indices()
        self.eliminate_zeros()

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    @property
    def row_ptr(self) -> np.ndarray:
        return self.indptr

    @property
    def col_idx(self) -> np.ndarray:
        return self.indices

    @property
    def values(self) -> np.ndarray:
        return self.data

    def row_nnz(self) -> np.ndarray:
        """Stored-entry count of every row."""
        return np.diff(self.indptr)

    def col_nnz(self) -> np.ndarray:
        """Stored-entry count of every column."""
        return np.bincount(self.indices, minlength=self.shape[1])


def as_matrix(x) -> SparseMatrix:
    """Coerce ``x`` (dense array or any scipy sparse matrix) to canonical form."""
    if isinstance(x, SparseMatrix):
        return x
    if sp.issparse(x):
        return SparseMatrix(x.tocsr())
    return from_dense(x)


def from_dense(arr) -> SparseMatrix:
    """Build a canonical matrix from a dense 2-d array."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-d array, got shape {a.shape}")
    return SparseMatrix(sp.csr_matrix(a))


def identity(n: int) -> SparseMatrix:
    return SparseMatrix(sp.identity(n, format="csr"))


def matmul(a, bt) -> SparseMatrix:
    """Sparse product ``a @ bt`` of two row-major matrices.

    The right operand is used exactly as stored.  To form a product
    against the columns of some matrix ``B``, pass the materialized
    transpose (see :func:`transpose`); column access is never simulated
    by strided reads.
    """
    a = as_matrix(a)
    bt = as_matrix(bt)
    if a.shape[1] != bt.shape[0]:
        raise ShapeError(
            f"inner dimensions disagree: {a.shape} @ {bt.shape}"
        )
    return SparseMatrix(a @ bt)


def transpose(a) -> SparseMatrix:
    """Materialized transpose, back in canonical row-major form."""
    return SparseMatrix(as_matrix(a).T.tocsr())


def binarize(a) -> SparseMatrix:
    """Indicator of strictly positive entries.

    Entries ``> 0`` become 1.0; zeros and negatives are dropped.
    """
    a = as_matrix(a)
    data = np.where(a.data > 0.0, 1.0, 0.0)
    return SparseMatrix((data, a.indices.copy(), a.indptr.copy()), shape=a.shape)


def _require_binary(a: SparseMatrix, side: str) -> None:
    # canonical form stores no zeros, so binary means all stored values are 1
    if a.data.size and not np.all(a.data == 1.0):
        raise ValueError(f"{side} operand is not binary")


def trace_product(y, yhat) -> int:
    """Number of coordinates stored as 1 in both binary operands.

    Equals the trace of ``y.T @ yhat`` for binary matrices, i.e. the
    count of true positives when ``y`` holds ground truth and ``yhat``
    holds predicted incidences.
    """
    y = as_matrix(y)
    yhat = as_matrix(yhat)
    if y.shape != yhat.shape:
        raise ShapeError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    _require_binary(y, "left")
    _require_binary(yhat, "right")
    return int(y.multiply(yhat).nnz)


def row_top_k(a, k: int) -> SparseMatrix:
    """Binary selection of the ``k`` largest strictly positive entries per row.

    Ties resolve toward the lowest column index.  Rows with fewer than
    ``k`` positive entries keep all of them; rows with none stay empty.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    a = as_matrix(a)
    sel_rows: list[np.ndarray] = []
    sel_cols: list[np.ndarray] = []
    for i in range(a.shape[0]):
        lo, hi = a.indptr[i], a.indptr[i + 1]
        cols = a.indices[lo:hi]
        vals = a.data[lo:hi]
        pos = vals > 0.0
        cols, vals = cols[pos], vals[pos]
        if cols.size == 0:
            continue
        if cols.size > k:
            # primary key: value descending; secondary: column ascending
            keep = np.lexsort((cols, -vals))[:k]
            cols = np.sort(cols[keep])
        sel_cols.append(cols.astype(np.int64))
        sel_rows.append(np.full(cols.size, i, dtype=np.int64))
    if sel_rows:
        rows = np.concatenate(sel_rows)
        cols = np.concatenate(sel_cols)
    else:
        rows = np.empty(0, dtype=np.int64)
        cols = np.empty(0, dtype=np.int64)
    vals = np.ones(rows.size, dtype=np.float64)
    return SparseMatrix(sp.coo_matrix((vals, (rows, cols)), shape=a.shape))


def equal(a, b) -> bool:
    """Exact equality of two matrices (canonical forms compared field-wise)."""
    a = as_matrix(a)
    b = as_matrix(b)
    return (
        a.shape == b.shape
        and np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )
