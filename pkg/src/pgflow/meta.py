"""Meta training across tasks by local gradient steps and parameter averaging,
plus the pooled and per-task-optimum baselines.

One round: every task copies the shared vector, takes R flow-matching SGD
steps on its own fresh batches, and the round ends with the plain average of
the task results (fixed ascending task order, so reruns are bit-identical).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .envs import State, Task
from .net import param_norm
from .objective import Batch, fm_loss_grad, sample_batch, visited_states

TRACE_COLUMNS = ("round", "task_id", "inner_step", "loss", "grad_norm", "wall_ms")

GRAD_NORM_LIMIT = 1e6


@dataclass
class MetaConfig:
    rounds: int = 30            # T outer rounds
    inner_steps: int = 20       # R local steps per task per round
    batch_size: int = 16        # K trajectories per batch
    eta: float = 0.005          # local learning rate
    n_tasks: int = 1
    seed: int = 1
    explore_eps: float = 0.1

    def __post_init__(self):
        if min(self.rounds, self.inner_steps, self.batch_size, self.n_tasks) < 1:
            raise ValueError("rounds, inner_steps, batch_size, n_tasks must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0.0 <= self.explore_eps <= 1.0:
            raise ValueError("explore_eps must lie in [0, 1]")


@dataclass
class StepRecord:
    round: int
    task_id: int
    inner_step: int
    loss: float
    grad_norm: float
    wall_ms: float = 0.0   # kept for the trace contract; zero so reruns are byte-identical


@dataclass
class RoundRecord:
    round: int
    delta_w: float
    mean_loss: float


@dataclass
class TrainTrace:
    steps: list[StepRecord] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    visits: dict[int, list[State]] = field(default_factory=dict)
    batches_consumed: int = 0

    def log_visit(self, task_id: int, states: list[State]) -> None:
        self.visits.setdefault(task_id, []).extend(states)


def task_rngs(seed: int, n_tasks: int) -> list[np.random.Generator]:
    """One independent generator per task, all derived from one seed."""
    seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in seq.spawn(n_tasks)]


def _check_grad(grad_norm: float, where: str) -> None:
    if not np.isfinite(grad_norm) or grad_norm > GRAD_NORM_LIMIT:
        raise FloatingPointError(f"divergent gradient ({grad_norm:.3e}) in {where}")


def _default_batch_source(task, net, params, rng, config):
    return sample_batch(task, net, params, rng, config.batch_size, config.explore_eps)


def _default_loss_grad(task, net, params, batch):
    return fm_loss_grad(task, net, params, batch)


def average_params(vectors: list[np.ndarray]) -> np.ndarray:
    """(1/N) * sum, fixed ascending order."""
    total = vectors[0].copy()
    for v in vectors[1:]:
        total += v
    return (1.0 / len(vectors)) * total


def gflowmeta_train(
    tasks: list[Task],
    net,
    config: MetaConfig,
    *,
    rng_streams: list[np.random.Generator] | None = None,
    on_round=None,
    batch_source=None,
    loss_grad=None,
    trace: TrainTrace | None = None,
) -> tuple[np.ndarray, TrainTrace]:
    """Algorithm: per round, local SGD per task from the shared vector, then
    average. Returns the final shared vector and the training trace.

    A caller-supplied ``trace`` lets round callbacks read the visit log live.
    """
    if len(tasks) != config.n_tasks:
        raise ValueError(f"expected {config.n_tasks} tasks, got {len(tasks)}")
    rngs = rng_streams if rng_streams is not None else task_rngs(config.seed, len(tasks))
    batch_source = batch_source or _default_batch_source
    loss_grad = loss_grad or _default_loss_grad
    trace = trace if trace is not None else TrainTrace()
    w = net.init_params(config.seed)
    for t in range(1, config.rounds + 1):
        locals_: list[np.ndarray] = []
        round_losses = []
        for i, task in enumerate(tasks):
            w_i = w.copy()
            for r in range(1, config.inner_steps + 1):
                batch = batch_source(task, net, w_i, rngs[i], config)
                if isinstance(batch, Batch):
                    trace.log_visit(i, visited_states(batch))
                trace.batches_consumed += 1
                loss, grad = loss_grad(task, net, w_i, batch)
                gnorm = param_norm(grad)
                _check_grad(gnorm, f"round {t} task {i}")
                w_i = w_i - config.eta * grad
                trace.steps.append(StepRecord(t, i, r, loss, gnorm))
                round_losses.append(loss)
            locals_.append(w_i)
        w_next = average_params(locals_)
        trace.rounds.append(
            RoundRecord(t, param_norm(w_next - w), float(np.mean(round_losses)))
        )
        w = w_next
        if on_round is not None:
            on_round(t, w, None)
    return w, trace


def pooled_gflownet_train(
    tasks: list[Task],
    net,
    config: MetaConfig,
    *,
    rng_streams: list[np.random.Generator] | None = None,
    on_round=None,
    batch_source=None,
    loss_grad=None,
    trace: TrainTrace | None = None,
) -> tuple[np.ndarray, TrainTrace]:
    """One policy trained on batches drawn round-robin from every task, with
    the same total budget (N*T*R steps) as the meta loop."""
    if len(tasks) != config.n_tasks:
        raise ValueError(f"expected {config.n_tasks} tasks, got {len(tasks)}")
    rngs = rng_streams if rng_streams is not None else task_rngs(config.seed, len(tasks))
    batch_source = batch_source or _default_batch_source
    loss_grad = loss_grad or _default_loss_grad
    trace = trace if trace is not None else TrainTrace()
    w = net.init_params(config.seed)
    for t in range(1, config.rounds + 1):
        w_start = w.copy()
        round_losses = []
        for r in range(1, config.inner_steps + 1):
            for i, task in enumerate(tasks):
                batch = batch_source(task, net, w, rngs[i], config)
                if isinstance(batch, Batch):
                    trace.log_visit(i, visited_states(batch))
                trace.batches_consumed += 1
                loss, grad = loss_grad(task, net, w, batch)
                gnorm = param_norm(grad)
                _check_grad(gnorm, f"pooled round {t} task {i}")
                w = w - config.eta * grad
                trace.steps.append(StepRecord(t, i, r, loss, gnorm))
                round_losses.append(loss)
        trace.rounds.append(
            RoundRecord(t, param_norm(w - w_start), float(np.mean(round_losses)))
        )
        if on_round is not None:
            on_round(t, w, None)
    return w, trace


class PlateauDetector:
    """Signals a stop once the mean loss of the last ``window`` steps improves
    by less than ``rtol`` (relative) over the window before it. Window means
    rather than single samples, so minibatch noise does not trip it."""

    def __init__(self, window: int = 50, rtol: float = 1e-4):
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self.rtol = rtol
        self.history: list[float] = []

    def update(self, loss: float) -> bool:
        self.history.append(loss)
        if len(self.history) < 2 * self.window:
            return False
        old = float(np.mean(self.history[-2 * self.window : -self.window]))
        new = float(np.mean(self.history[-self.window :]))
        return (old - new) < self.rtol * max(abs(old), 1e-12)


def per_task_optimum_train(
    task: Task,
    net,
    config: MetaConfig,
    budget: int,
    *,
    rng: np.random.Generator | None = None,
    plateau_window: int = 50,
    plateau_rtol: float = 1e-4,
    on_step=None,
    trace: TrainTrace | None = None,
    task_id: int = 0,
) -> tuple[np.ndarray, TrainTrace]:
    """Reference single-task training: plain SGD until the loss plateaus or
    the step budget runs out."""
    rng = rng if rng is not None else task_rngs(config.seed, 1)[0]
    trace = trace if trace is not None else TrainTrace()
    w = net.init_params(config.seed)
    detector = PlateauDetector(plateau_window, plateau_rtol)
    for step in range(1, budget + 1):
        batch = sample_batch(task, net, w, rng, config.batch_size, config.explore_eps)
        trace.log_visit(task_id, visited_states(batch))
        trace.batches_consumed += 1
        loss, grad = fm_loss_grad(task, net, w, batch)
        gnorm = param_norm(grad)
        _check_grad(gnorm, f"per-task step {step}")
        w = w - config.eta * grad
        trace.steps.append(StepRecord(0, task_id, step, loss, gnorm))
        if on_step is not None:
            on_step(step, w)
        if detector.update(loss):
            break
    return w, trace


def write_trace_csv(path, trace: TrainTrace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for s in trace.steps:
            writer.writerow(
                [s.round, s.task_id, s.inner_step, repr(s.loss),
                 repr(s.grad_norm), repr(s.wall_ms)]
            )
