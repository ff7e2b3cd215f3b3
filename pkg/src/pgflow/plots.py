"""Static SVG charts for run directories.

All output is deterministic: fixed hash salt, no embedded dates, data order
fixed by the CSV files. Rerunning `plot` on the same run directory rewrites
byte-identical SVGs.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "pgflow"

import matplotlib.pyplot as plt
import numpy as np

from .metrics import METRIC_COLUMNS, MetricRecord, read_metrics_csv


class PlotError(ValueError):
    """Missing or malformed plotting inputs."""


def _checked_read(path) -> list[MetricRecord]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    missing = [c for c in METRIC_COLUMNS if c not in header]
    if missing:
        raise PlotError(f"{path}: missing columns {missing}")
    return read_metrics_csv(path)


def _by_task(records: list[MetricRecord]) -> dict[int, list[MetricRecord]]:
    grouped: dict[int, list[MetricRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.task_id, []).append(rec)
    for rows in grouped.values():
        rows.sort(key=lambda r: r.round)
    return grouped


def _save(fig, path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def _round_mean(records: list[MetricRecord], attr: str) -> tuple[list, list]:
    per_round: dict[int, list[float]] = {}
    for rec in records:
        per_round.setdefault(rec.round, []).append(getattr(rec, attr))
    rounds = sorted(per_round)
    return rounds, [float(np.mean(per_round[t])) for t in rounds]


def curve_figure(records: list[MetricRecord], attr: str, ylabel: str, title: str):
    """Per-task thin lines plus a bold mean line; empty data gives bare axes."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for task_id, rows in sorted(_by_task(records).items()):
        ax.plot(
            [r.round for r in rows], [getattr(r, attr) for r in rows],
            alpha=0.45, linewidth=1.0, label=f"task {task_id}",
        )
    if records:
        rounds, means = _round_mean(records, attr)
        ax.plot(rounds, means, color="black", linewidth=2.0, label="mean")
        ax.legend(fontsize=8)
    ax.set_xlabel("round")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    return fig


def modes_figure(records: list[MetricRecord], title: str):
    """Step curve of cumulative modes against cumulative visited states."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for task_id, rows in sorted(_by_task(records).items()):
        xs = [0] + [r.visited for r in rows]
        ys = [0] + [r.modes for r in rows]
        ax.step(xs, ys, where="post", label=f"task {task_id}")
    if records:
        ax.legend(fontsize=8)
    ax.set_xlabel("states visited")
    ax.set_ylabel("modes found")
    ax.set_title(title)
    fig.tight_layout()
    return fig


def render_run_plots(run_dir) -> list[Path]:
    """One L1, reward, and modes SVG per metrics CSV, under <run>/plots/."""
    run = Path(run_dir)
    metrics_dir = run / "metrics"
    if not metrics_dir.is_dir():
        raise PlotError(f"{run}: no metrics/ directory")
    plots_dir = run / "plots"
    plots_dir.mkdir(exist_ok=True)
    out: list[Path] = []
    for csv_path in sorted(metrics_dir.glob("*.csv")):
        records = _checked_read(csv_path)
        stem = csv_path.stem
        fig = curve_figure(records, "l1", "empirical L1 error", stem)
        out.append(_save(fig, plots_dir / f"{stem}_l1.svg"))
        fig = curve_figure(records, "avg_reward", "averaged reward", stem)
        out.append(_save(fig, plots_dir / f"{stem}_reward.svg"))
        fig = modes_figure(records, stem)
        out.append(_save(fig, plots_dir / f"{stem}_modes.svg"))
    return out


# -- sweep overlays ---------------------------------------------------------


def render_sweep_plots(sweep_dir) -> list[Path]:
    """Overlay the per-value mean curves of a parameter sweep.

    Expects the layout the sweep command writes: sweep.json naming the
    parameter and mapping each value to its sub-run directory.
    """
    sweep = Path(sweep_dir)
    meta_path = sweep / "sweep.json"
    if not meta_path.exists():
        raise PlotError(f"{sweep}: no sweep.json")
    meta = json.loads(meta_path.read_text())
    param, runs = meta["param"], meta["runs"]
    out = []
    for attr, ylabel, suffix in (
        ("l1", "empirical L1 error", "l1"),
        ("avg_reward", "averaged reward", "reward"),
    ):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for value in meta["values"]:
            run = sweep / runs[str(value)]
            records = []
            for csv_path in sorted((run / "metrics").glob("*.csv")):
                records.extend(_checked_read(csv_path))
            if not records:
                continue
            rounds, means = _round_mean(records, attr)
            ax.plot(rounds, means, label=f"{param}={value}")
        ax.set_xlabel("round")
        ax.set_ylabel(ylabel)
        ax.set_title(f"sweep over {param}")
        ax.legend(fontsize=8)
        fig.tight_layout()
        out.append(_save(fig, sweep / f"sweep_{suffix}.svg"))
    return out
