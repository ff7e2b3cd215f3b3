"""Flow-matching loss over sampled trajectories, and the policies it induces.

The per-trajectory loss sums, over every non-initial state the trajectory
visits, the squared flow-consistency residual

    inflow(s') - reward(s') - outflow(s')

where inflow adds the edge flows of all reachable parents of s', reward is
nonzero only at terminal states, and outflow adds the flows of s's own valid
actions (empty at terminals). A batch averages trajectory losses.

Batches are compiled once into a sparse residual operator so the proximal
inner solver can re-evaluate loss and exact gradient on a fixed batch cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .envs import State, Task
from .net import NumericsError, encoding_matrix


@dataclass
class Trajectory:
    steps: list[tuple[State, int, State]]
    terminal_state: State
    terminal_reward: float


@dataclass
class Batch:
    trajectories: list[Trajectory]

    def __len__(self) -> int:
        return len(self.trajectories)


# -- policies -----------------------------------------------------------------

class NetPolicy:
    """Stochastic policy: flows of valid actions normalized, optionally
    mixed with a uniform exploration component."""

    def __init__(self, task: Task, net, params: np.ndarray, explore_eps: float = 0.0):
        if not 0.0 <= explore_eps <= 1.0:
            raise ValueError("explore_eps must lie in [0, 1]")
        self.task = task
        self.net = net
        self.params = params
        self.explore_eps = explore_eps

    def probs_matrix(self, state_idx: np.ndarray) -> np.ndarray:
        """Rows of action probabilities over global action ids; invalid = 0."""
        task = self.task
        flows = self.net.flows_for(task, self.params, state_idx)
        probs = np.zeros_like(flows)
        for i, si in enumerate(np.atleast_1d(state_idx)):
            acts = task.valid_actions(task.states[si])
            f = flows[i, list(acts)]
            total = f.sum()
            if not np.isfinite(total) or total <= 0:
                raise NumericsError(f"degenerate flows at state {task.states[si]}")
            p = f / total
            if self.explore_eps:
                p = (1.0 - self.explore_eps) * p + self.explore_eps / len(acts)
            probs[i, list(acts)] = p
        return probs

    def probs(self, state: State) -> np.ndarray:
        idx = np.array([self.task.state_index[state]])
        return self.probs_matrix(idx)[0]


class GreedyNetPolicy(NetPolicy):
    """Deterministic policy: all mass on the highest-flow valid action."""

    def __init__(self, task: Task, net, params: np.ndarray):
        super().__init__(task, net, params, explore_eps=0.0)

    def probs_matrix(self, state_idx: np.ndarray) -> np.ndarray:
        task = self.task
        flows = self.net.flows_for(task, self.params, state_idx)
        probs = np.zeros_like(flows)
        for i, si in enumerate(np.atleast_1d(state_idx)):
            acts = task.valid_actions(task.states[si])
            best = acts[int(np.argmax(flows[i, list(acts)]))]
            probs[i, best] = 1.0
        return probs


class TablePolicy:
    """Policy backed by an explicit per-state action-probability table."""

    def __init__(self, task: Task, table: dict[State, np.ndarray]):
        self.task = task
        self.table = table

    def probs_matrix(self, state_idx: np.ndarray) -> np.ndarray:
        rows = [self.table[self.task.states[si]] for si in np.atleast_1d(state_idx)]
        return np.stack(rows)

    def probs(self, state: State) -> np.ndarray:
        return np.asarray(self.table[state])


def uniform_policy(task: Task) -> TablePolicy:
    table = {}
    for s in task.states:
        if task.is_terminal(s):
            continue
        p = np.zeros(task.action_count)
        acts = task.valid_actions(s)
        p[list(acts)] = 1.0 / len(acts)
        table[s] = p
    return TablePolicy(task, table)


def policy_probs(task: Task, net, params: np.ndarray, state: State) -> np.ndarray:
    """Distribution over the valid actions of ``state``, in ascending action
    order (matches task.valid_actions)."""
    pol = NetPolicy(task, net, params)
    full = pol.probs(state)
    return full[list(task.valid_actions(state))]


# -- sampling -----------------------------------------------------------------

def _draw(rng_values: np.ndarray, probs: np.ndarray, valid: Sequence[int]) -> int:
    cdf = np.cumsum(probs[list(valid)])
    j = int(np.searchsorted(cdf, rng_values))
    return valid[min(j, len(valid) - 1)]


def rollout_terminals(
    task: Task, policy, rng: np.random.Generator, n: int
) -> list[State]:
    """Terminal states of n policy rollouts, advanced level-synchronously."""
    finished: list[State | None] = [None] * n
    cur = [task.start] * n
    alive = list(range(n))
    guard = task.rows + task.cols + 2
    for _ in range(guard):
        if not alive:
            break
        idx = np.array([task.state_index[cur[j]] for j in alive])
        uniq, inv = np.unique(idx, return_inverse=True)
        pmat = policy.probs_matrix(uniq)
        us = rng.random(len(alive))
        nxt_alive = []
        for k, j in enumerate(alive):
            s = cur[j]
            a = _draw(us[k], pmat[inv[k]], task.valid_actions(s))
            s2 = task.transition(s, a)
            if task.is_terminal(s2):
                finished[j] = s2
            else:
                cur[j] = s2
                nxt_alive.append(j)
        alive = nxt_alive
    if alive:
        raise RuntimeError("rollout exceeded the DAG depth bound")
    return finished  # type: ignore[return-value]


def sample_batch(
    task: Task,
    net,
    params: np.ndarray,
    rng: np.random.Generator,
    k: int,
    explore_eps: float,
) -> Batch:
    """K trajectories from the explore_eps-mixed policy at ``params``."""
    policy = NetPolicy(task, net, params, explore_eps)
    steps: list[list[tuple[State, int, State]]] = [[] for _ in range(k)]
    done: list[Trajectory | None] = [None] * k
    cur = [task.start] * k
    alive = list(range(k))
    guard = task.rows + task.cols + 2
    for _ in range(guard):
        if not alive:
            break
        idx = np.array([task.state_index[cur[j]] for j in alive])
        uniq, inv = np.unique(idx, return_inverse=True)
        pmat = policy.probs_matrix(uniq)
        us = rng.random(len(alive))
        nxt_alive = []
        for pos, j in enumerate(alive):
            s = cur[j]
            a = _draw(us[pos], pmat[inv[pos]], task.valid_actions(s))
            s2 = task.transition(s, a)
            steps[j].append((s, a, s2))
            if task.is_terminal(s2):
                done[j] = Trajectory(steps[j], s2, task.reward(s2))
            else:
                cur[j] = s2
                nxt_alive.append(j)
        alive = nxt_alive
    if alive:
        raise RuntimeError("sampling exceeded the DAG depth bound")
    return Batch([t for t in done if t is not None])


def sample_trajectory(
    task: Task, net, params: np.ndarray, rng: np.random.Generator, explore_eps: float
) -> Trajectory:
    return sample_batch(task, net, params, rng, 1, explore_eps).trajectories[0]


# -- compiled batch loss -------------------------------------------------------

@dataclass
class BatchPlan:
    """Sparse form of the batch residuals.

    ``residuals = M @ flows.ravel() - rewards`` where row i of M encodes the
    inflow minus outflow of one visited state occurrence, and ``flows`` is the
    (n_query, action_count) flow matrix at ``state_idx``.
    """

    state_idx: np.ndarray          # unique states whose flows are needed
    matrix: sp.csr_matrix          # (n_occurrences, n_query * action_count)
    rewards: np.ndarray            # (n_occurrences,)
    weights: np.ndarray            # per-occurrence loss weights
    occupants: list[State] = field(default_factory=list)


def _plan_from_occurrences(task: Task, occurrences, weights) -> BatchPlan:
    """occurrences: list of visited non-initial states (with multiplicity)."""
    acount = task.action_count
    query: dict[int, int] = {}

    def q(state: State) -> int:
        si = task.state_index[state]
        if si not in query:
            query[si] = len(query)
        return query[si]

    rows, cols, vals = [], [], []
    rewards = np.zeros(len(occurrences))
    for i, s in enumerate(occurrences):
        for parent, action in task.parents(s):
            rows.append(i)
            cols.append((q(parent), action))
            vals.append(1.0)
        if task.is_terminal(s):
            rewards[i] = task.reward(s)
        else:
            qi = q(s)
            for action in task.valid_actions(s):
                rows.append(i)
                cols.append((qi, action))
                vals.append(-1.0)
    state_idx = np.empty(len(query), dtype=np.intp)
    for si, qi in query.items():
        state_idx[qi] = si
    flat_cols = [qi * acount + a for qi, a in cols]
    matrix = sp.csr_matrix(
        (vals, (rows, flat_cols)), shape=(len(occurrences), len(query) * acount)
    )
    return BatchPlan(state_idx, matrix, rewards, np.asarray(weights, dtype=np.float64),
                     occupants=list(occurrences))


def compile_batch(task: Task, batch: Batch) -> BatchPlan:
    if not batch.trajectories:
        raise ValueError("empty batch")
    occurrences: list[State] = []
    for traj in batch.trajectories:
        for _, _, s2 in traj.steps:
            occurrences.append(s2)
    weights = np.full(len(occurrences), 1.0 / len(batch.trajectories))
    return _plan_from_occurrences(task, occurrences, weights)


def compile_expectation(task: Task, visit_mass: dict[State, float]) -> BatchPlan:
    """Plan whose loss is the exact expected trajectory loss under a policy
    with the given state-visit probabilities (each non-root state once)."""
    occurrences = [s for s in task.states if s != task.start]
    weights = [visit_mass.get(s, 0.0) for s in occurrences]
    return _plan_from_occurrences(task, occurrences, weights)


def loss_from_plan(task: Task, net, params: np.ndarray, plan: BatchPlan) -> float:
    flows = net.flows_for(task, params, plan.state_idx)
    resid = plan.matrix @ flows.ravel() - plan.rewards
    return float(np.dot(plan.weights * resid, resid))


def loss_grad_from_plan(
    task: Task, net, params: np.ndarray, plan: BatchPlan
) -> tuple[float, np.ndarray]:
    flows = net.flows_for(task, params, plan.state_idx)
    resid = plan.matrix @ flows.ravel() - plan.rewards
    loss = float(np.dot(plan.weights * resid, resid))
    # d loss / d flow = 2 * M^T (weights * resid); chain through flow = exp(logF)
    back = 2.0 * (plan.matrix.T @ (plan.weights * resid))
    cot = back.reshape(flows.shape) * flows
    grad = net.log_grad_for(task, params, plan.state_idx, cot)
    if not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite flow-matching gradient")
    return loss, grad


def fm_loss(task: Task, net, params: np.ndarray, batch: Batch) -> float:
    """Mean over trajectories of the summed squared flow residuals."""
    return loss_from_plan(task, net, params, compile_batch(task, batch))


def fm_loss_grad(
    task: Task, net, params: np.ndarray, batch: Batch
) -> tuple[float, np.ndarray]:
    return loss_grad_from_plan(task, net, params, compile_batch(task, batch))


def visited_states(batch: Batch) -> list[State]:
    """All states the batch visited, in sampling order, root included once
    per trajectory; feeds the mode-discovery curve."""
    out: list[State] = []
    for traj in batch.trajectories:
        if traj.steps:
            out.append(traj.steps[0][0])
        for _, _, s2 in traj.steps:
            out.append(s2)
    return out
