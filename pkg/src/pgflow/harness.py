"""Experiment orchestration: task suites, seeded runs, persistence, comparison.

A run directory is self-describing:

    config.snapshot   exact config the run used
    tasks/            one spec file per seed, one task per line
    traces/           per-step training CSVs
    metrics/          per-round evaluation CSVs
    checkpoints/      final parameter vectors
    theory/           constant/bound reports (personalized runs only)
    summary.json      final metrics, mean and std across seeds
    MANIFEST          file inventory, or the failure point

Everything derives from the config seeds; reruns are byte-identical.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, save_config, with_overrides
from .envs import (
    CLIFF_WALKING,
    FROZEN_LAKE,
    GRID_WORLD,
    Task,
    TaskGenerationError,
    TaskSpec,
    make_task,
    parse_task_spec,
    serialize_task_spec,
)
from .meta import (
    TrainTrace,
    gflowmeta_train,
    per_task_optimum_train,
    pooled_gflownet_train,
    task_rngs,
    write_trace_csv,
)
from .metrics import (
    MetricRecord,
    averaged_reward,
    empirical_l1,
    l1_exact,
    mode_set,
    read_metrics_csv,
    summarize,
    write_metrics_csv,
)
from .net import net_for_task, save_checkpoint
from .objective import GreedyNetPolicy, NetPolicy
from .pmeta import pgflowmeta_train, write_ptrace_csv, write_rounds_csv
from .theory import build_theory_report

# summary.json keys per algorithm; the personalized run reports two policies
SUMMARY_KEYS = {
    "gflownets_pooled": ("gflownets",),
    "gflownets_star": ("gflownets_star",),
    "gflowmeta": ("gflowmeta",),
    "pgflowmeta": ("pgflowmeta_mp", "pgflowmeta_pp"),
}
SUMMARY_ORDER = (
    "gflownets", "gflownets_star", "gflowmeta", "pgflowmeta_mp", "pgflowmeta_pp",
)
CONCRETE_ALGORITHMS = tuple(SUMMARY_KEYS)

# fixed stream labels so suite generation, evaluation, and training never share
_SUITE_DOMAIN = 0x517E
_EVAL_DOMAIN = 0xE7A1


class HarnessError(RuntimeError):
    """A stage of a run failed; ``stage`` names where."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


def worker_count() -> int:
    """Seed-level parallelism cap from PGFLOW_THREADS (default sequential)."""
    raw = os.environ.get("PGFLOW_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"PGFLOW_THREADS must be an integer, got {raw!r}") from None


def expand_algorithms(algorithm: str) -> tuple[str, ...]:
    return CONCRETE_ALGORITHMS if algorithm == "all" else (algorithm,)


# -- task suites ----------------------------------------------------------------


def _suite_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _SUITE_DOMAIN]))


def generate_task_suite(
    config: ExperimentConfig, seed: int | None = None
) -> list[TaskSpec]:
    """Draw one task suite.

    distinct mode: per-task environment parameters drawn independently.
    similar mode: one parameter draw shared by all tasks; only the per-task
    seed (hence the rollout randomness) differs.
    """
    seed = config.seeds[0] if seed is None else seed
    rng = _suite_rng(seed)
    n = config.n_tasks
    task_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=n)]
    size = (config.env_grid_rows, config.env_grid_cols)
    distinct = config.task_mode == "distinct"

    if config.env_kind == GRID_WORLD:
        lo, hi = config.env_r0_min, config.env_r0_max
        if distinct:
            for _ in range(100):
                r0s = rng.uniform(lo, hi, size=n)
                if len(set(float(v) for v in r0s)) == n:
                    break
            else:
                raise TaskGenerationError("could not draw pairwise distinct r0")
        else:
            r0s = np.full(n, rng.uniform(lo, hi))
        return [
            TaskSpec(GRID_WORLD, size, task_seeds[i], r0=float(r0s[i]))
            for i in range(n)
        ]

    if config.env_kind == FROZEN_LAKE:
        if distinct:
            if config.env_n_holes < 1:
                raise TaskGenerationError(
                    "distinct frozen lake tasks need at least one hole"
                )
            layouts: list[frozenset] = []
            for i in range(n):
                draw = task_seeds[i]
                for _ in range(1000):
                    task = make_task(
                        FROZEN_LAKE, draw, grid_size=size, n_holes=config.env_n_holes
                    )
                    if task.spec.holes not in layouts:
                        break
                    draw = int(rng.integers(0, 2**31 - 1))
                else:
                    raise TaskGenerationError(
                        "could not draw pairwise different hole layouts"
                    )
                layouts.append(task.spec.holes)
            return [
                TaskSpec(FROZEN_LAKE, size, task_seeds[i], holes=layouts[i])
                for i in range(n)
            ]
        shared = make_task(
            FROZEN_LAKE,
            int(rng.integers(0, 2**31 - 1)),
            grid_size=size,
            n_holes=config.env_n_holes,
        ).spec.holes
        return [
            TaskSpec(FROZEN_LAKE, size, task_seeds[i], holes=shared) for i in range(n)
        ]

    # cliff walking: lengths from the configured inclusive range
    lo, hi = config.env_cliff_min, config.env_cliff_max
    if distinct:
        lengths = [int(v) for v in rng.integers(lo, hi + 1, size=n)]
    else:
        lengths = [int(rng.integers(lo, hi + 1))] * n
    return [
        TaskSpec(CLIFF_WALKING, size, task_seeds[i], cliff_length=lengths[i])
        for i in range(n)
    ]


def load_task_suite(path) -> list[TaskSpec]:
    # blank-line separated spec blocks
    text = Path(path).read_text()
    return [parse_task_spec(block) for block in text.split("\n\n") if block.strip()]


def _write_task_suite(path, specs: list[TaskSpec]) -> None:
    with open(path, "w") as fh:
        for spec in specs:
            fh.write(serialize_task_spec(spec) + "\n")


# -- evaluation -------------------------------------------------------------


def _eval_rng(seed: int, algorithm: str) -> np.random.Generator:
    alg_idx = CONCRETE_ALGORITHMS.index(algorithm)
    return np.random.default_rng(np.random.SeedSequence([seed, _EVAL_DOMAIN, alg_idx]))


def _eval_round(
    round_idx: int,
    tasks: list[Task],
    net,
    params_per_task: list[np.ndarray],
    visits: dict[int, list],
    rng: np.random.Generator,
    config: ExperimentConfig,
) -> list[MetricRecord]:
    records = []
    for i, task in enumerate(tasks):
        policy = NetPolicy(task, net, params_per_task[i])
        n = config.eval_n_samples * config.eval_n_batches
        l1 = empirical_l1(task, policy, n, rng)
        l1x = l1_exact(task, policy)
        log = visits.get(i, [])
        modes = len(mode_set(task).intersection(log))
        reward = averaged_reward(
            task, GreedyNetPolicy(task, net, params_per_task[i]),
            config.eval_n_batches, config.eval_n_samples, None, deterministic=True,
        )
        records.append(MetricRecord(round_idx, i, l1, l1x, modes, len(log), reward))
    return records


def _eval_due(round_idx: int, config: ExperimentConfig) -> bool:
    return round_idx % config.eval_every == 0 or round_idx == config.rounds


def _final_means(records: list[MetricRecord]) -> dict[str, float]:
    last = max(r.round for r in records)
    rows = [r for r in records if r.round == last]
    return {
        "reward": float(np.mean([r.avg_reward for r in rows])),
        "l1": float(np.mean([r.l1 for r in rows])),
        "l1_exact": float(np.mean([r.l1_exact for r in rows])),
        "modes": float(np.mean([r.modes for r in rows])),
    }


# -- per-seed execution ---------------------------------------------------------


def _run_pooled(config, tasks, net, seed, paths):
    rng = _eval_rng(seed, "gflownets_pooled")
    records: list[MetricRecord] = []
    trace = TrainTrace()

    def on_round(t, w, _):
        if _eval_due(t, config):
            records.extend(
                _eval_round(t, tasks, net, [w] * len(tasks), trace.visits, rng, config)
            )

    w, _ = pooled_gflownet_train(
        tasks, net, config.meta_config(seed), on_round=on_round, trace=trace
    )
    write_trace_csv(paths["traces"] / f"seed{seed}_gflownets.csv", trace)
    write_metrics_csv(paths["metrics"] / f"seed{seed}_gflownets.csv", records)
    save_checkpoint(paths["checkpoints"] / f"seed{seed}_gflownets.ckpt", net, w, seed)
    return {"gflownets": _final_means(records)}


def _run_star(config, tasks, net, seed, paths):
    rng = _eval_rng(seed, "gflownets_star")
    records: list[MetricRecord] = []
    budget = config.star_steps
    mcfg = config.meta_config(seed)
    rngs = task_rngs(seed, len(tasks))
    trace = TrainTrace()
    for i, task in enumerate(tasks):
        def on_step(step, w, i=i, task=task):
            if step % config.inner_steps and step != budget:
                return
            t = (step + config.inner_steps - 1) // config.inner_steps
            if _eval_due(t, config) or step == budget:
                row = _eval_round(t, [task], net, [w],
                                  {0: trace.visits.get(i, [])}, rng, config)[0]
                records.append(
                    MetricRecord(t, i, row.l1, row.l1_exact, row.modes,
                                 row.visited, row.avg_reward)
                )

        # full budget, no early stop: parity with the meta loops
        w, _ = per_task_optimum_train(
            task, net, mcfg, budget,
            rng=rngs[i], plateau_window=budget + 1, on_step=on_step,
            trace=trace, task_id=i,
        )
        save_checkpoint(
            paths["checkpoints"] / f"seed{seed}_gflownets_star_task{i}.ckpt",
            net, w, seed,
        )
    write_trace_csv(paths["traces"] / f"seed{seed}_gflownets_star.csv", trace)
    write_metrics_csv(paths["metrics"] / f"seed{seed}_gflownets_star.csv", records)
    return {"gflownets_star": _final_means(records)}


def _run_gflowmeta(config, tasks, net, seed, paths):
    rng = _eval_rng(seed, "gflowmeta")
    records: list[MetricRecord] = []
    trace = TrainTrace()

    def on_round(t, w, _):
        if _eval_due(t, config):
            records.extend(
                _eval_round(t, tasks, net, [w] * len(tasks), trace.visits, rng, config)
            )

    w, _ = gflowmeta_train(
        tasks, net, config.meta_config(seed), on_round=on_round, trace=trace
    )
    write_trace_csv(paths["traces"] / f"seed{seed}_gflowmeta.csv", trace)
    write_metrics_csv(paths["metrics"] / f"seed{seed}_gflowmeta.csv", records)
    save_checkpoint(paths["checkpoints"] / f"seed{seed}_gflowmeta.ckpt", net, w, seed)
    return {"gflowmeta": _final_means(records)}


def _run_pgflowmeta(config, tasks, net, seed, paths):
    rng = _eval_rng(seed, "pgflowmeta")
    mp_records: list[MetricRecord] = []
    pp_records: list[MetricRecord] = []
    trace = TrainTrace()

    def on_round(t, w, thetas):
        if _eval_due(t, config):
            mp_records.extend(
                _eval_round(t, tasks, net, [w] * len(tasks), trace.visits, rng, config)
            )
            pp_records.extend(
                _eval_round(t, tasks, net, thetas, trace.visits, rng, config)
            )

    result = pgflowmeta_train(
        tasks, net, config.pmeta_config(seed), on_round=on_round, trace=trace
    )
    write_ptrace_csv(paths["traces"] / f"seed{seed}_pgflowmeta_steps.csv", result)
    write_rounds_csv(paths["traces"] / f"seed{seed}_pgflowmeta_rounds.csv", result)
    write_metrics_csv(paths["metrics"] / f"seed{seed}_pgflowmeta_mp.csv", mp_records)
    write_metrics_csv(paths["metrics"] / f"seed{seed}_pgflowmeta_pp.csv", pp_records)
    save_checkpoint(
        paths["checkpoints"] / f"seed{seed}_pgflowmeta_mp.ckpt", net, result.w, seed
    )
    for i, theta in enumerate(result.thetas):
        save_checkpoint(
            paths["checkpoints"] / f"seed{seed}_pgflowmeta_pp_task{i}.ckpt",
            net, theta, seed,
        )
    report = build_theory_report(
        tasks, net, result.w,
        lam=config.lam, delta=config.delta, eta_configured=config.eta,
        explore_eps=config.explore_eps, batch_size=config.batch_size, seed=seed,
    )
    (paths["theory"] / f"seed{seed}.json").write_text(report.to_json() + "\n")
    return {
        "pgflowmeta_mp": _final_means(mp_records),
        "pgflowmeta_pp": _final_means(pp_records),
    }


_RUNNERS = {
    "gflownets_pooled": _run_pooled,
    "gflownets_star": _run_star,
    "gflowmeta": _run_gflowmeta,
    "pgflowmeta": _run_pgflowmeta,
}


def _run_seed(config: ExperimentConfig, algorithms, seed: int, paths) -> dict:
    try:
        specs = generate_task_suite(config, seed)
        _write_task_suite(paths["tasks"] / f"seed{seed}.tasks", specs)
        tasks = [Task(spec) for spec in specs]
        net = net_for_task(tasks[0], config.hidden)
    except Exception as exc:
        raise HarnessError(f"seed {seed} task generation", exc) from exc
    out: dict[str, dict] = {}
    for alg in algorithms:
        try:
            out.update(_RUNNERS[alg](config, tasks, net, seed, paths))
        except HarnessError:
            raise
        except Exception as exc:
            raise HarnessError(f"seed {seed} algorithm {alg}", exc) from exc
    return out


# -- run directory ----------------------------------------------------------


def _write_manifest(out_dir: Path, status: str, extra: list[str]) -> None:
    lines = [f"status: {status}"] + extra + ["files:"]
    skip = {"MANIFEST"}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name not in skip:
            lines.append("  " + p.relative_to(out_dir).as_posix())
    (out_dir / "MANIFEST").write_text("\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig, out_dir, seeds=None) -> Path:
    """Execute the configured algorithms for every seed; returns the run dir.

    On failure the partial outputs stay on disk and MANIFEST records the
    failing stage before the error propagates.
    """
    if seeds is not None:
        config = with_overrides(config, seeds=tuple(seeds))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in
             ("tasks", "traces", "metrics", "checkpoints", "theory")}
    for p in paths.values():
        p.mkdir(exist_ok=True)
    save_config(out / "config.snapshot", config)
    algorithms = expand_algorithms(config.algorithm)
    header = [
        f"env_kind: {config.env_kind}",
        f"algorithm: {config.algorithm}",
        f"task_mode: {config.task_mode}",
        "seeds: " + ",".join(str(s) for s in config.seeds),
    ]
    per_seed: dict[int, dict] = {}
    try:
        workers = worker_count()
        if workers > 1 and len(config.seeds) > 1:
            with ThreadPoolExecutor(max_workers=min(workers, len(config.seeds))) as ex:
                futures = {
                    seed: ex.submit(_run_seed, config, algorithms, seed, paths)
                    for seed in config.seeds
                }
                for seed in config.seeds:
                    per_seed[seed] = futures[seed].result()
        else:
            for seed in config.seeds:
                per_seed[seed] = _run_seed(config, algorithms, seed, paths)
    except HarnessError as exc:
        _write_manifest(out, "failed", header + [f"failed_at: {exc.stage}",
                                                 f"error: {exc}"])
        raise
    except Exception as exc:
        _write_manifest(out, "failed", header + ["failed_at: setup",
                                                 f"error: {exc}"])
        raise
    summary = _summarize_run(per_seed)
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n"
    )
    _write_manifest(out, "ok", header)
    return out


def _summarize_run(per_seed: dict[int, dict]) -> dict:
    keys: list[str] = []
    for result in per_seed.values():
        for k in result:
            if k not in keys:
                keys.append(k)
    summary = {}
    for key in keys:
        block = {}
        for metric in ("reward", "l1", "l1_exact", "modes"):
            values = [per_seed[s][key][metric] for s in sorted(per_seed)]
            block[metric] = summarize(values)
        summary[key] = block
    return summary


# -- comparison tables --------------------------------------------------------


def read_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"no summary.json under {run_dir}")
    return json.loads(path.read_text())


def format_comparison(run_dirs, metric: str = "reward") -> str:
    """Fixed-width text table, one row per run, one column per algorithm."""
    rows = []
    for rd in run_dirs:
        summary = read_summary(rd)
        label = Path(rd).name
        cells = {}
        for key in SUMMARY_ORDER:
            if key in summary:
                m = summary[key][metric]
                cells[key] = f"{m['mean']:.2f} ± {m['std']:.2f}"
        rows.append((label, cells))
    present = [k for k in SUMMARY_ORDER if any(k in cells for _, cells in rows)]
    headers = ["run"] + present
    table = [headers]
    for label, cells in rows:
        table.append([label] + [cells.get(k, "--") for k in present])
    widths = [max(len(row[j]) for row in table) for j in range(len(headers))]
    lines = []
    for idx, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(headers))))
    return "\n".join(lines) + "\n"


def collect_final_metrics(run_dir, algorithm_key: str) -> list[MetricRecord]:
    """Last-round metric rows for one algorithm across all seeds of a run."""
    out = []
    metrics_dir = Path(run_dir) / "metrics"
    for path in sorted(metrics_dir.glob(f"seed*_{algorithm_key}.csv")):
        records = read_metrics_csv(path)
        if not records:
            continue
        last = max(r.round for r in records)
        out.extend(r for r in records if r.round == last)
    return out
