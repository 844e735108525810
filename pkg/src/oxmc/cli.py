"""Command-line surface for training, refining, and evaluating models.

Exit codes: 0 on success, 1 on runtime failures (bad files, infeasible
settings), 2 on flag errors.  Diagnostics go to stderr.  `OXMC_THREADS`
caps the training worker pool and `OXMC_LOG` sets the log level.
"""

from __future__ import annotations

import functools
import logging
import os
import sys
from pathlib import Path

import click

from .dataio import (
    Dataset,
    load_dataset,
    load_predictions,
    normalize_rows,
    save_dataset,
    save_predictions,
)
from .metrics import (
    compute_propensities,
    metrics_table,
    precision_at_k,
    psp_at_k,
    write_metrics_csv,
)
from .model import load_model, match_matrix, predict_many, save_model
from .overlap import objective_relaxed
from .report import SweepPoint, render_budget_sweep, render_metric_bars
from .synth import FusionSpec, fuse_labels, save_fusion_mapping
from .train import TrainConfig, refine, train_baseline

REPORT_KS = (1, 3, 5)


def _guard(fn):
    """Turn runtime failures into clean exit-1 diagnostics on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(1)

    return wrapper


def _load_normalized(path) -> Dataset:
    data = load_dataset(path)
    return Dataset(X=normalize_rows(data.X), Y=data.Y)


@click.group()
def main() -> None:
    """Overlapping-cluster extreme multi-label classification."""
    level_name = os.environ.get("OXMC_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Training set in the labeled sparse text format.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory to write the trained model into.")
@click.option("--branch", default=32, show_default=True, type=click.IntRange(min=2),
              help="Tree branching factor.")
@click.option("--max-leaf", "max_leaf", default=100, show_default=True,
              type=click.IntRange(min=1), help="Largest allowed leaf label count.")
@click.option("--beam", default=10, show_default=True, type=click.IntRange(min=1),
              help="Beam width for tree matching.")
@click.option("--seed", default=0, show_default=True, type=int)
@_guard
def train(data: str, out: str, branch: int, max_leaf: int, beam: int, seed: int) -> None:
    """Train a partitioned baseline model."""
    corpus = _load_normalized(data)
    cfg = TrainConfig(
        branching=branch, max_leaf_size=max_leaf, beam=beam, overlap_budget=1, seed=seed
    )
    model = train_baseline(corpus, cfg)
    save_model(model, out)
    click.echo(f"trained {model.n_clusters} clusters over {corpus.n_labels} labels -> {out}")


@main.command(name="refine")
@click.option("--model", "model_dir", required=True,
              type=click.Path(exists=True, file_okay=False), help="Baseline model directory.")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Training set used to recompute the assignment and retrain.")
@click.option("--lambda", "overlap_budget", default=2, show_default=True,
              type=click.IntRange(min=1), help="Per-label cluster budget.")
@click.option("--rounds", default=1, show_default=True, type=click.IntRange(min=1),
              help="Alternating refinement rounds.")
@click.option("--rlap", is_flag=True,
              help="Use the capacity-constrained greedy assignment.")
@click.option("--xi", default=None, type=click.IntRange(min=1),
              help="Per-cluster slot capacity; requires --rlap.")
@click.option("--random-baseline", "random_baseline", is_flag=True,
              help="Duplicate labels into random extra clusters (ablation).")
@click.option("--clusters-only", "clusters_only", is_flag=True,
              help="Reassign clusters and retrain rankers, keeping matcher weights.")
@click.option("--out", default=None, type=click.Path(file_okay=False),
              help="Output model directory.  [default: overwrite --model]")
@_guard
def refine_cmd(model_dir: str, data: str, overlap_budget: int, rounds: int, rlap: bool,
               xi: int | None, random_baseline: bool, clusters_only: bool,
               out: str | None) -> None:
    """Refine a model with overlapping cluster assignment."""
    if rlap and random_baseline:
        raise click.UsageError("--rlap and --random-baseline are mutually exclusive")
    if xi is not None and not rlap:
        raise click.UsageError("--xi requires --rlap")
    method = "capacity" if rlap else ("random" if random_baseline else "projection")
    model = load_model(model_dir)
    corpus = _load_normalized(data)
    cfg = TrainConfig(
        branching=model.tree.branching,
        beam=model.beam,
        overlap_budget=overlap_budget,
        rounds=rounds,
        seed=model.seed,
        score_mode=model.score_mode,
        assignment_method=method,
        capacity=xi,
    )
    dest = Path(out) if out is not None else Path(model_dir)
    dest.mkdir(parents=True, exist_ok=True)
    refined = refine(model, corpus, cfg, log_path=dest / "refine.log",
                     clusters_only=clusters_only)
    save_model(refined, dest)
    dup = refined.assignment.total_slots - corpus.n_labels
    click.echo(f"refined {rounds} round(s), {dup} duplicated slots -> {dest}")


@main.command()
@click.option("--model", "model_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Instances to score (label columns are ignored).")
@click.option("--topk", default=10, show_default=True, type=click.IntRange(min=1),
              help="Ranked labels to keep per instance.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Predictions file, one line per instance.")
@_guard
def predict(model_dir: str, data: str, topk: int, out: str) -> None:
    """Score instances and write ranked label:score lines."""
    model = load_model(model_dir)
    corpus = _load_normalized(data)
    preds = predict_many(model, corpus.X, k=topk)
    save_predictions(preds, out)
    click.echo(f"wrote {len(preds)} prediction rows -> {out}")


@main.command(name="eval")
@click.option("--pred", "pred_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Predictions file; repeat to compare models side by side.")
@click.option("--gold", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Test set with the true labels.")
@click.option("--train-gold", "train_gold", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Training set, used to fit label propensities.")
@click.option("--A", "prop_a", default=0.55, show_default=True, type=float,
              help="Propensity exponent.")
@click.option("--B", "prop_b", default=1.5, show_default=True, type=float,
              help="Propensity shift.")
@click.option("--csv", "csv_path", default=None, type=click.Path(dir_okay=False),
              help="Also write the table as CSV, with a bar chart beside it.")
@_guard
def eval_cmd(pred_paths: tuple[str, ...], gold: str, train_gold: str,
             prop_a: float, prop_b: float, csv_path: str | None) -> None:
    """Report precision and propensity-scored precision at 1, 3, 5."""
    gold_y = load_dataset(gold).Y
    props = compute_propensities(load_dataset(train_gold).Y, a=prop_a, b=prop_b)
    results: dict[str, dict[str, float]] = {}
    for path in pred_paths:
        preds = load_predictions(path)
        row: dict[str, float] = {}
        for k in REPORT_KS:
            row[f"p@{k}"] = precision_at_k(preds, gold_y, k)
            row[f"psp@{k}"] = psp_at_k(preds, gold_y, props, k)
        results[Path(path).stem] = row
    click.echo(metrics_table(results), nl=False)
    if csv_path is not None:
        write_metrics_csv(results, csv_path)
        figure = Path(csv_path).with_suffix(".png")
        render_metric_bars(results, figure)
        click.echo(f"wrote {csv_path} and {figure}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Source dataset whose labels get fused.")
@click.option("--mode", default="hard", show_default=True,
              type=click.Choice(["easy", "medium", "hard"]),
              help="How dissimilar the fused members are.")
@click.option("--k", "merge_k", default=5, show_default=True, type=click.IntRange(min=2),
              help="Labels merged per fused label.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Fused dataset file; the group mapping lands beside it.")
@_guard
def synth(data: str, mode: str, merge_k: int, seed: int, out: str) -> None:
    """Fuse label groups into multi-modal pseudo-labels."""
    corpus = load_dataset(data)
    fused, group_of = fuse_labels(corpus, FusionSpec(mode=mode, merge_k=merge_k, seed=seed))
    save_dataset(fused, out)
    mapping = Path(out).with_suffix(Path(out).suffix + ".mapping")
    save_fusion_mapping(group_of, mapping)
    click.echo(
        f"fused {corpus.n_labels} labels into {fused.n_labels} -> {out} (+ {mapping.name})"
    )


@main.command(name="sweep-lambda")
@click.option("--model", "model_dir", required=True,
              type=click.Path(exists=True, file_okay=False), help="Baseline model directory.")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Training set for refinement; also scored unless --test is given.")
@click.option("--test", "test_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Held-out set for the precision columns.")
@click.option("--lambda-max", "lambda_max", default=6, show_default=True,
              type=click.IntRange(min=1), help="Largest per-label budget to try.")
@click.option("--rounds", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory for sweep.csv and sweep.png.")
@_guard
def sweep_lambda(model_dir: str, data: str, test_path: str | None, lambda_max: int,
                 rounds: int, out: str) -> None:
    """Refine at each budget 1..max and report objective and precision."""
    base = load_model(model_dir)
    corpus = _load_normalized(data)
    held_out = _load_normalized(test_path) if test_path is not None else corpus
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    points = []
    click.echo("lambda objective " + " ".join(f"p@{k}" for k in REPORT_KS))
    for budget in range(1, lambda_max + 1):
        cfg = TrainConfig(
            branching=base.tree.branching,
            beam=base.beam,
            overlap_budget=budget,
            rounds=rounds,
            seed=base.seed,
            score_mode=base.score_mode,
        )
        refined = refine(base, corpus, cfg)
        objective = objective_relaxed(
            corpus.Y, match_matrix(refined, corpus.X), refined.assignment
        )
        preds = predict_many(refined, held_out.X, k=max(REPORT_KS))
        metrics = {f"p@{k}": precision_at_k(preds, held_out.Y, k) for k in REPORT_KS}
        points.append(SweepPoint(budget=budget, objective=objective, metrics=metrics))
        cells = " ".join(f"{metrics[f'p@{k}']:.4f}" for k in REPORT_KS)
        click.echo(f"{budget} {objective:.0f} {cells}")
    with open(out_dir / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("lambda,objective," + ",".join(f"p@{k}" for k in REPORT_KS) + "\n")
        for p in points:
            row = ",".join(f"{p.metrics[f'p@{k}']:.6f}" for k in REPORT_KS)
            fh.write(f"{p.budget},{p.objective:.6f},{row}\n")
    render_budget_sweep(points, out_dir / "sweep.png")
    click.echo(f"wrote {out_dir / 'sweep.csv'} and {out_dir / 'sweep.png'}")


if __name__ == "__main__":
    main()
