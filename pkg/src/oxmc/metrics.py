"""Ranking metrics: precision at k and its propensity-scored variant.

Propensity scoring discounts head labels: each label's weight is the
inverse of its estimated observation propensity, fitted from training
frequencies with the standard sigmoid-in-log-frequency model.  The
propensity-scored precision of an instance is normalized by the best
achievable weighted top-k over its own true labels, so a perfect
ranking scores 1 regardless of which labels it has.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrices import as_matrix

__all__ = [
    "ranked_labels",
    "precision_at_k",
    "Propensities",
    "compute_propensities",
    "psp_at_k",
    "metrics_table",
    "write_metrics_csv",
]


def ranked_labels(preds) -> list[np.ndarray]:
    """Normalize predictions to per-instance ranked label arrays.

    Accepts objects with a ``labels`` attribute (already ranked), or
    (labels, scores) tuples, or bare arrays.
    """
    out = []
    for p in preds:
        labels = getattr(p, "labels", None)
        if labels is None:
            labels = p[0] if isinstance(p, tuple) else p
        out.append(np.asarray(labels, dtype=np.int64))
    return out


def precision_at_k(preds, y_true, k: int) -> float:
    """Mean over instances of (true labels in the top k) / k.

    Instances with no true labels contribute 0, mirroring the usual
    convention that every test instance counts in the mean.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    y = as_matrix(y_true)
    ranked = ranked_labels(preds)
    if len(ranked) != y.shape[0]:
        raise ValueError(
            f"prediction count {len(ranked)} does not match instance count {y.shape[0]}"
        )
    total = 0.0
    for i, labels in enumerate(ranked):
        truth = set(y.col_idx[y.row_ptr[i] : y.row_ptr[i + 1]].tolist())
        hits = sum(1 for l in labels[:k] if int(l) in truth)
        total += hits / k
    return total / max(1, y.shape[0])


@dataclass(frozen=True)
class Propensities:
    """Per-label observation propensities in (0, 1]."""

    p: np.ndarray
    a: float
    b: float

    def inverse(self) -> np.ndarray:
        return 1.0 / self.p


def compute_propensities(y_train, a: float = 0.55, b: float = 1.5) -> Propensities:
    """Fit label propensities from training frequencies.

    ``p_l = 1 / (1 + C * exp(-a * log(N_l + b)))`` with
    ``C = (log n - 1) * (1 + b)^a``, where ``N_l`` counts the label's
    training positives and ``n`` the training instances.  Values are
    clamped into (0, 1]; tiny corpora can push the raw formula above 1.
    """
    y = as_matrix(y_train)
    n = y.shape[0]
    if n < 1:
        raise ValueError("need at least one training instance")
    counts = y.col_nnz().astype(np.float64)
    c = (np.log(n) - 1.0) * (1.0 + b) ** a
    raw = 1.0 / (1.0 + c * np.exp(-a * np.log(counts + b)))
    p = np.clip(raw, np.finfo(np.float64).tiny, 1.0)
    return Propensities(p=p, a=a, b=b)


def psp_at_k(preds, y_true, propensities: Propensities, k: int) -> float:
    """Propensity-scored precision at k, self-normalized per instance.

    Each instance scores the inverse-propensity mass of its true labels
    in the top k, divided by the largest mass any k predictions could
    have achieved (its true labels' k largest inverse propensities).
    Instances without true labels are skipped; they have no achievable
    mass to normalize by.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    y = as_matrix(y_true)
    ranked = ranked_labels(preds)
    if len(ranked) != y.shape[0]:
        raise ValueError(
            f"prediction count {len(ranked)} does not match instance count {y.shape[0]}"
        )
    inv = propensities.inverse()
    total = 0.0
    scored = 0
    for i, labels in enumerate(ranked):
        truth = y.col_idx[y.row_ptr[i] : y.row_ptr[i + 1]]
        if truth.size == 0:
            continue
        truth_set = set(truth.tolist())
        got = sum(inv[int(l)] for l in labels[:k] if int(l) in truth_set)
        ideal = np.sort(inv[truth])[::-1][:k].sum()
        total += got / ideal
        scored += 1
    return total / max(1, scored)


def metrics_table(results: dict[str, dict[str, float]]) -> str:
    """Fixed-width text table: one row per model, one column per metric."""
    if not results:
        return "(no results)\n"
    metric_names = sorted({m for row in results.values() for m in row})
    name_w = max(len("model"), *(len(n) for n in results))
    col_w = max(10, *(len(m) for m in metric_names)) if metric_names else 10
    lines = [
        "model".ljust(name_w) + "".join(m.rjust(col_w + 2) for m in metric_names)
    ]
    for name, row in results.items():
        cells = "".join(
            (f"{row[m]:.4f}" if m in row else "-").rjust(col_w + 2) for m in metric_names
        )
        lines.append(name.ljust(name_w) + cells)
    return "\n".join(lines) + "\n"


def write_metrics_csv(results: dict[str, dict[str, float]], path) -> None:
    """Comma-separated mirror of :func:`metrics_table`."""
    import csv

    metric_names = sorted({m for row in results.values() for m in row})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", *metric_names])
        for name, row in results.items():
            writer.writerow(
                [name, *(f"{row[m]:.6f}" if m in row else "" for m in metric_names)]
            )
