"""Evaluation metrics: empirical L1 error, mode discovery, averaged rewards."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .envs import CLIFF_WALKING, FROZEN_LAKE, GRID_WORLD, MODE_BAND, State, Task
from .objective import rollout_terminals
from .oracle import exact_policy_distribution, exact_target_distribution

METRIC_COLUMNS = ("round", "task_id", "l1", "l1_exact", "modes", "visited", "avg_reward")


@dataclass
class MetricRecord:
    round: int
    task_id: int
    l1: float
    l1_exact: float
    modes: int
    visited: int
    avg_reward: float


def empirical_l1(
    task: Task, policy, n_samples: int, rng: np.random.Generator
) -> float:
    """Mean absolute gap between the reward-proportional target and the
    policy's terminal frequencies over all reachable terminals."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    target = exact_target_distribution(task)
    ends = rollout_terminals(task, policy, rng, n_samples)
    counts: dict[State, int] = {}
    for s in ends:
        counts[s] = counts.get(s, 0) + 1
    gaps = [abs(p - counts.get(s, 0) / n_samples) for s, p in target.items()]
    return float(np.mean(gaps))


def l1_exact(task: Task, policy) -> float:
    """Sampling-free variant: exact policy pushforward vs the target."""
    target = exact_target_distribution(task)
    induced = exact_policy_distribution(task, policy)
    gaps = [abs(p - induced.get(s, 0.0)) for s, p in target.items()]
    return float(np.mean(gaps))


def mode_set(task: Task) -> frozenset[State]:
    """High-reward terminal states: bonus cells (grid world) or goals."""
    kind = task.spec.env
    if kind == GRID_WORLD:
        modes = []
        for s, _ in task.enumerate_terminals():
            hit = all(
                MODE_BAND[0] < abs(c / (n - 1) - 0.5) < MODE_BAND[1]
                for c, n in ((s.row, task.rows), (s.col, task.cols))
            )
            if hit:
                modes.append(s)
        return frozenset(modes)
    if kind in (FROZEN_LAKE, CLIFF_WALKING):
        return frozenset(State(r, c, False) for r, c in task.goals)
    raise ValueError(f"unknown env kind {kind!r}")


def modes_found_curve(
    task: Task, visit_log: list[State]
) -> list[tuple[int, int]]:
    """Step curve (visited-state count, cumulative distinct modes found)."""
    modes = mode_set(task)
    curve = [(0, 0)]
    seen: set[State] = set()
    for i, s in enumerate(visit_log):
        if s in modes and s not in seen:
            seen.add(s)
            curve.append((i + 1, len(seen)))
    if not visit_log:
        return curve
    if curve[-1][0] != len(visit_log):
        curve.append((len(visit_log), len(seen)))
    return curve


def averaged_reward(
    task: Task,
    policy,
    n_batches: int,
    batch_size: int,
    rng: np.random.Generator | None,
    deterministic: bool = False,
) -> float:
    """Mean end-state reward over rollout batches; the deterministic variant
    follows the argmax policy and needs no rng."""
    if deterministic:
        # every rollout is identical, one suffices
        ends = rollout_terminals(task, policy, np.random.default_rng(0), 1)
        return task.reward(ends[0])
    if rng is None:
        raise ValueError("stochastic evaluation needs an rng")
    n = n_batches * batch_size
    ends = rollout_terminals(task, policy, rng, n)
    return float(np.mean([task.reward(s) for s in ends]))


def write_metrics_csv(path, records: list[MetricRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for rec in records:
            writer.writerow(
                [rec.round, rec.task_id, repr(rec.l1), repr(rec.l1_exact),
                 rec.modes, rec.visited, repr(rec.avg_reward)]
            )


def read_metrics_csv(path) -> list[MetricRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                MetricRecord(
                    int(row["round"]), int(row["task_id"]), float(row["l1"]),
                    float(row["l1_exact"]), int(row["modes"]), int(row["visited"]),
                    float(row["avg_reward"]),
                )
            )
    return out


def summarize(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def metrics_to_json(records: list[MetricRecord]) -> str:
    return json.dumps([asdict(r) for r in records], sort_keys=True)
