"""Loading and saving multi-label datasets in the delimited text format.

A dataset file starts with a header line ``n d L`` (instance count,
feature dimension, label count) followed by exactly ``n`` data lines::

    l1,l2 i1:v1 i2:v2 ...

Label ids and feature indices are zero-based; feature indices must be
strictly ascending within a line.  A line for an instance with no
labels starts with a space; an instance with no features ends after the
label field.  Values round-trip exactly through ``repr``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .matrices import SparseMatrix, as_matrix

__all__ = [
    "DatasetFormatError",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "normalize_rows",
    "save_predictions",
    "load_predictions",
]

log = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the offending 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``X`` (n x d) and binary label matrix ``Y`` (n x L)."""

    X: SparseMatrix
    Y: SparseMatrix

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(
                f"row count mismatch: X has {self.X.shape[0]} rows, Y has {self.Y.shape[0]}"
            )
        if self.Y.data.size and not np.all(self.Y.data == 1.0):
            raise ValueError("label matrix must be binary")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_labels(self) -> int:
        return self.Y.shape[1]

    def degenerate_rows(self) -> np.ndarray:
        """Indices of instances with no features."""
        return np.flatnonzero(self.X.row_nnz() == 0)


def _parse_header(line: str) -> tuple[int, int, int]:
    parts = line.split()
    if len(parts) != 3:
        raise DatasetFormatError(1, f"header must be 'n d L', got {line!r}")
    try:
        n, d, n_labels = (int(p) for p in parts)
    except ValueError:
        raise DatasetFormatError(1, f"header fields must be integers, got {line!r}") from None
    if n < 0 or d < 1 or n_labels < 1:
        raise DatasetFormatError(1, f"header dimensions out of range: {line!r}")
    return n, d, n_labels


def load_dataset(path) -> Dataset:
    """Parse a dataset file, validating indices and ordering.

    Raises :class:`DatasetFormatError` with the offending line number on
    any malformed content.  Instances with no labels or no features are
    legal but logged as warnings.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(1, "empty file")
    n, d, n_labels = _parse_header(lines[0])
    if len(lines) - 1 < n:
        raise DatasetFormatError(len(lines) + 1, f"expected {n} data lines, found {len(lines) - 1}")
    if len(lines) - 1 > n:
        raise DatasetFormatError(n + 2, f"expected {n} data lines, found {len(lines) - 1}")

    x_rows: list[int] = []
    x_cols: list[int] = []
    x_vals: list[float] = []
    y_rows: list[int] = []
    y_cols: list[int] = []
    for i in range(n):
        ln = i + 2
        head, _, rest = lines[i + 1].partition(" ")
        if head:
            for tok in head.split(","):
                try:
                    lab = int(tok)
                except ValueError:
                    raise DatasetFormatError(ln, f"malformed label id {tok!r}") from None
                if not 0 <= lab < n_labels:
                    raise DatasetFormatError(
                        ln, f"label id {lab} out of range [0, {n_labels})"
                    )
                y_rows.append(i)
                y_cols.append(lab)
        else:
            log.warning("line %d: instance has no labels", ln)
        prev = -1
        feats = rest.split()
        for tok in feats:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise DatasetFormatError(ln, f"malformed feature token {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise DatasetFormatError(ln, f"malformed feature index in {tok!r}") from None
            try:
                val = float(val_s)
            except ValueError:
                raise DatasetFormatError(ln, f"non-numeric feature value in {tok!r}") from None
            if not 0 <= idx < d:
                raise DatasetFormatError(ln, f"feature index {idx} out of range [0, {d})")
            if idx <= prev:
                raise DatasetFormatError(
                    ln, f"feature indices not strictly ascending at {tok!r}"
                )
            prev = idx
            x_rows.append(i)
            x_cols.append(idx)
            x_vals.append(val)
        if not feats:
            log.warning("line %d: instance has no features", ln)

    x = SparseMatrix(
        sp.coo_matrix((x_vals, (x_rows, x_cols)), shape=(n, d))
    )
    y = SparseMatrix(
        sp.coo_matrix((np.ones(len(y_rows)), (y_rows, y_cols)), shape=(n, n_labels))
    )
    return Dataset(X=x, Y=y)


def save_dataset(data: Dataset, path) -> None:
    """Write a dataset in the text format; ``load_dataset`` inverts it exactly."""
    x, y = data.X, data.Y
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{data.n} {data.d} {data.n_labels}\n")
        for i in range(data.n):
            labels = y.col_idx[y.row_ptr[i] : y.row_ptr[i + 1]]
            cols = x.col_idx[x.row_ptr[i] : x.row_ptr[i + 1]]
            vals = x.values[x.row_ptr[i] : x.row_ptr[i + 1]]
            head = ",".join(str(l) for l in labels)
            feats = " ".join(f"{c}:{float(v)!r}" for c, v in zip(cols, vals))
            if feats:
                fh.write(f"{head} {feats}\n")
            else:
                fh.write(f"{head}\n")


def normalize_rows(x) -> SparseMatrix:
    """Scale every row to unit Euclidean norm; zero rows pass through."""
    x = as_matrix(x)
    sq = np.asarray(x.multiply(x).sum(axis=1)).ravel()
    norms = np.sqrt(sq)
    scale = np.ones_like(norms)
    nz = norms > 0
    scale[nz] = 1.0 / norms[nz]
    return SparseMatrix(sp.diags(scale) @ x)


def _prediction_pairs(pred) -> list[tuple[int, float]]:
    labels = getattr(pred, "labels", None)
    if labels is not None:
        scores = pred.scores
    else:
        labels, scores = pred
    pairs = list(zip((int(l) for l in labels), (float(s) for s in scores)))
    pairs.sort(key=lambda t: (-t[1], t[0]))
    return pairs


def save_predictions(preds, path) -> None:
    """Write one line per instance of ``label:score`` pairs.

    Pairs are ordered by descending score (ties toward the lower label
    id) and scores carry six decimal places.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for pred in preds:
            pairs = _prediction_pairs(pred)
            fh.write(" ".join(f"{l}:{s:.6f}" for l, s in pairs) + "\n")


def load_predictions(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parse a predictions file back into per-instance (labels, scores) arrays."""
    out: list[tuple[np.ndarray, np.ndarray]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh.read().splitlines(), start=1):
            labels: list[int] = []
            scores: list[float] = []
            for tok in line.split():
                lab_s, sep, sc_s = tok.partition(":")
                if not sep:
                    raise DatasetFormatError(ln, f"malformed prediction token {tok!r}")
                try:
                    labels.append(int(lab_s))
                    scores.append(float(sc_s))
                except ValueError:
                    raise DatasetFormatError(ln, f"malformed prediction token {tok!r}") from None
            out.append((np.asarray(labels, dtype=np.int64), np.asarray(scores)))
    return out
