"""Figure rendering for sweep and evaluation reports.

Figures are written straight to image files with the non-interactive
backend, so report generation works in batch jobs without a display.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["SweepPoint", "render_budget_sweep", "render_metric_bars"]


@dataclass(frozen=True)
class SweepPoint:
    """One overlap-budget setting with its objective and metric values."""

    budget: int
    objective: float
    metrics: dict[str, float] = field(default_factory=dict)


def render_budget_sweep(points: list[SweepPoint], path) -> str:
    """Plot objective and precision curves against the overlap budget.

    The objective uses the left axis, every metric shares the right
    axis.  Points are sorted by budget before plotting.
    """
    if not points:
        raise ValueError("need at least one sweep point")
    pts = sorted(points, key=lambda p: p.budget)
    budgets = [p.budget for p in pts]
    fig, ax_obj = plt.subplots(figsize=(6.0, 4.0))
    ax_obj.plot(budgets, [p.objective for p in pts], "o-", color="tab:blue", label="objective")
    ax_obj.set_xlabel("overlap budget")
    ax_obj.set_ylabel("relaxed objective", color="tab:blue")
    ax_obj.tick_params(axis="y", labelcolor="tab:blue")
    ax_obj.set_xticks(budgets)

    metric_names = sorted({m for p in pts for m in p.metrics})
    if metric_names:
        ax_met = ax_obj.twinx()
        for name in metric_names:
            xs = [p.budget for p in pts if name in p.metrics]
            ys = [p.metrics[name] for p in pts if name in p.metrics]
            ax_met.plot(xs, ys, "s--", label=name)
        ax_met.set_ylabel("precision")
        ax_met.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def render_metric_bars(results: dict[str, dict[str, float]], path) -> str:
    """Grouped bar chart: one group per metric, one bar per model."""
    if not results:
        raise ValueError("need at least one model's results")
    metric_names = sorted({m for row in results.values() for m in row})
    if not metric_names:
        raise ValueError("results contain no metric values")
    model_names = list(results)
    width = 0.8 / len(model_names)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(metric_names)), 4.0))
    for j, model in enumerate(model_names):
        xs = [i + j * width for i in range(len(metric_names))]
        ys = [results[model].get(m, 0.0) for m in metric_names]
        ax.bar(xs, ys, width=width, label=model)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(metric_names))])
    ax.set_xticklabels(metric_names)
    ax.set_ylabel("value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
