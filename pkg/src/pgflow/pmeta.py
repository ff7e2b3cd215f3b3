"""Personalized meta training: bilevel loop with proximal inner solves.

Each task keeps an auxiliary vector w_i. Per inner round it samples one fresh
batch, solves the personalized subproblem

    min_theta  batch_loss(theta) + (lam / 2) * ||w_i - theta||^2

inexactly (gradient descent on the fixed batch until the prox-objective
gradient norm falls to ``delta`` or the step cap), then moves the auxiliary
along the meta gradient lam * (w_i - theta_hat). Rounds end with the relaxed
average  w <- (1 - beta) * w + (beta / N) * sum_i w_i  in fixed task order.
Outputs: the shared meta vector (MP) and the personalized vectors (PP).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .envs import Task
from .meta import MetaConfig, RoundRecord, TrainTrace, _check_grad, task_rngs
from .net import param_norm
from .objective import Batch, compile_batch, loss_grad_from_plan, sample_batch, visited_states

PTRACE_COLUMNS = (
    "round", "task_id", "inner_r", "solve_steps", "solve_grad_norm",
    "g_norm", "pp_loss", "mp_loss",
)
ROUNDS_COLUMNS = ("t", "grad_sq", "grad_sq_runmin", "theta_w_gap_avg")


@dataclass
class PMetaConfig(MetaConfig):
    lam: float = 15.0                 # prox weight coupling theta to w
    beta: float = 1.0                 # aggregation relaxation
    inner_lr: float = 1e-3            # personalized learning rate
    delta: float = 1e-2               # inner solve gradient-norm target
    max_inner_solve_steps: int = 50
    warm_start: bool = True           # reuse previous theta within a round

    def __post_init__(self):
        super().__post_init__()
        if self.lam <= 0 or self.beta <= 0 or self.inner_lr <= 0:
            raise ValueError("lam, beta and inner_lr must be positive")
        if self.delta < 0 or self.max_inner_solve_steps < 0:
            raise ValueError("delta and max_inner_solve_steps must be nonnegative")


@dataclass
class SolveStats:
    steps: int
    grad_norm: float
    converged: bool


@dataclass
class PStepRecord:
    round: int
    task_id: int
    inner_r: int
    solve_steps: int
    solve_grad_norm: float
    g_norm: float
    pp_loss: float
    mp_loss: float


@dataclass
class PRoundRecord:
    round: int
    grad_sq: float
    theta_w_gap_avg: float
    delta_w: float


@dataclass
class PMetaResult:
    w: np.ndarray
    thetas: list[np.ndarray]
    trace: TrainTrace
    round_records: list[PRoundRecord] = field(default_factory=list)
    step_records: list[PStepRecord] = field(default_factory=list)


def meta_gradient(w: np.ndarray, theta_hat: np.ndarray, lam: float) -> np.ndarray:
    """Gradient of the Moreau-style task objective at w: lam * (w - theta_hat)."""
    return lam * (w - theta_hat)


def aux_meta_update(
    w: np.ndarray, theta_hat: np.ndarray, eta: float, lam: float
) -> np.ndarray:
    """w - eta * lam * (w - theta_hat); the exact-identity test recomputes this."""
    return w - eta * lam * (w - theta_hat)


def aggregate_relaxed(
    w_prev: np.ndarray, locals_: list[np.ndarray], beta: float
) -> np.ndarray:
    """(1 - beta) * w_prev + (beta / N) * sum(locals), fixed ascending order.

    With beta = 1 this reproduces the plain average bit-for-bit.
    """
    total = locals_[0].copy()
    for v in locals_[1:]:
        total += v
    return (1.0 - beta) * w_prev + (beta / len(locals_)) * total


def prox_objective_grad(
    task: Task, net, theta: np.ndarray, w_anchor: np.ndarray, lam: float, batch: Batch
) -> tuple[float, np.ndarray]:
    """Value and exact gradient of batch flow loss + (lam/2)||w - theta||^2."""
    plan = compile_batch(task, batch)
    loss, grad = loss_grad_from_plan(task, net, theta, plan)
    diff = theta - w_anchor
    value = loss + 0.5 * lam * float(diff @ diff)
    return value, grad + lam * diff


def solve_proximal(
    loss_grad_fn,
    w_anchor: np.ndarray,
    lam: float,
    lr: float,
    delta: float,
    max_steps: int,
    theta0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveStats]:
    """Gradient descent on loss(theta) + (lam/2)||w_anchor - theta||^2 with a
    fixed loss (the batch does not change mid-solve). Stops when the prox
    gradient norm reaches ``delta`` or after ``max_steps`` steps."""
    theta = (w_anchor if theta0 is None else theta0).copy()
    gnorm = np.inf
    for step in range(max_steps + 1):
        _, lgrad = loss_grad_fn(theta)
        pgrad = lgrad + lam * (theta - w_anchor)
        gnorm = param_norm(pgrad)
        _check_grad(gnorm, "proximal solve")
        if gnorm <= delta:
            return theta, SolveStats(step, gnorm, True)
        if step == max_steps:
            break
        theta = theta - lr * pgrad
    return theta, SolveStats(max_steps, gnorm, False)


def solve_personalized(
    task: Task,
    net,
    w_anchor: np.ndarray,
    config: PMetaConfig,
    rng: np.random.Generator,
    *,
    batch: Batch | None = None,
    theta0: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveStats, Batch]:
    """Sample one batch (unless given) and solve the personalized subproblem
    on it. Returns (theta_hat, solve stats, the batch used)."""
    sample_at = theta0 if theta0 is not None else w_anchor
    if batch is None:
        batch = sample_batch(
            task, net, sample_at, rng, config.batch_size, config.explore_eps
        )
    plan = compile_batch(task, batch)

    def fixed_loss_grad(theta):
        return loss_grad_from_plan(task, net, theta, plan)

    theta, stats = solve_proximal(
        fixed_loss_grad, w_anchor, config.lam, config.inner_lr,
        config.delta, config.max_inner_solve_steps, theta0=theta0,
    )
    return theta, stats, batch


def pgflowmeta_train(
    tasks: list[Task],
    net,
    config: PMetaConfig,
    *,
    rng_streams: list[np.random.Generator] | None = None,
    on_round=None,
    batch_source=None,
    loss_grad=None,
    trace: TrainTrace | None = None,
) -> PMetaResult:
    """Personalized meta loop. ``batch_source``/``loss_grad`` make the data
    source and objective injectable (synthetic objectives in diagnostics);
    the defaults are the flow-matching loss on freshly sampled batches."""
    if len(tasks) != config.n_tasks:
        raise ValueError(f"expected {config.n_tasks} tasks, got {len(tasks)}")
    rngs = rng_streams if rng_streams is not None else task_rngs(config.seed, len(tasks))
    trace = trace if trace is not None else TrainTrace()
    result = PMetaResult(np.empty(0), [], trace)
    w = net.init_params(config.seed)
    thetas: list[np.ndarray | None] = [None] * len(tasks)
    for t in range(1, config.rounds + 1):
        locals_: list[np.ndarray] = []
        first_gaps: list[float] = []
        first_meta_grads: list[np.ndarray] = []
        for i, task in enumerate(tasks):
            w_i = w.copy()
            theta_i: np.ndarray | None = None
            for r in range(1, config.inner_steps + 1):
                theta0 = theta_i if (config.warm_start and theta_i is not None) else w_i
                if batch_source is not None:
                    batch = batch_source(task, net, theta0, rngs[i], config)
                else:
                    batch = sample_batch(
                        task, net, theta0, rngs[i], config.batch_size, config.explore_eps
                    )
                if isinstance(batch, Batch):
                    trace.log_visit(i, visited_states(batch))
                trace.batches_consumed += 1
                if loss_grad is not None:
                    def fixed_loss_grad(theta, _b=batch, _task=task):
                        return loss_grad(_task, net, theta, _b)
                else:
                    plan = compile_batch(task, batch)
                    def fixed_loss_grad(theta, _p=plan, _task=task):
                        return loss_grad_from_plan(_task, net, theta, _p)
                theta_i, stats = solve_proximal(
                    fixed_loss_grad, w_i, config.lam, config.inner_lr,
                    config.delta, config.max_inner_solve_steps, theta0=theta0,
                )
                g = meta_gradient(w_i, theta_i, config.lam)
                gnorm = param_norm(g)
                _check_grad(gnorm, f"meta update round {t} task {i}")
                if r == 1:
                    first_gaps.append(float(np.sum((theta_i - w_i) ** 2)))
                    first_meta_grads.append(g.copy())
                pp_loss, _ = fixed_loss_grad(theta_i)
                mp_loss, _ = fixed_loss_grad(w_i)
                w_i = aux_meta_update(w_i, theta_i, config.eta, config.lam)
                result.step_records.append(
                    PStepRecord(t, i, r, stats.steps, stats.grad_norm,
                                gnorm, pp_loss, mp_loss)
                )
            locals_.append(w_i)
            thetas[i] = theta_i
        mean_meta_grad = sum(first_meta_grads[1:], first_meta_grads[0].copy())
        mean_meta_grad /= len(tasks)
        grad_sq = float(np.sum(mean_meta_grad**2))
        w_next = aggregate_relaxed(w, locals_, config.beta)
        result.round_records.append(
            PRoundRecord(t, grad_sq, float(np.mean(first_gaps)),
                         param_norm(w_next - w))
        )
        trace.rounds.append(
            RoundRecord(t, param_norm(w_next - w),
                        float(np.mean([s.pp_loss for s in result.step_records
                                       if s.round == t])))
        )
        w = w_next
        if on_round is not None:
            on_round(t, w, [th.copy() for th in thetas])
    result.w = w
    result.thetas = [th for th in thetas]
    return result


def write_ptrace_csv(path, result: PMetaResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PTRACE_COLUMNS)
        for s in result.step_records:
            writer.writerow(
                [s.round, s.task_id, s.inner_r, s.solve_steps,
                 repr(s.solve_grad_norm), repr(s.g_norm),
                 repr(s.pp_loss), repr(s.mp_loss)]
            )


def write_rounds_csv(path, result: PMetaResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_COLUMNS)
        runmin = np.inf
        for rec in result.round_records:
            runmin = min(runmin, rec.grad_sq)
            writer.writerow(
                [rec.round, repr(rec.grad_sq), repr(runmin),
                 repr(rec.theta_w_gap_avg)]
            )


def read_rounds_csv(path) -> list[PRoundRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                PRoundRecord(int(row["t"]), float(row["grad_sq"]),
                             float(row["theta_w_gap_avg"]), 0.0)
            )
    return out
