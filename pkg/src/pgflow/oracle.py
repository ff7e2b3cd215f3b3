"""Exact brute-force references: target distribution, flows, policy pushforward.

Everything here is dictionary-based dynamic programming over the enumerated
DAG, independent of the neural machinery, so it can serve as ground truth in
tests and metrics. The keystone identity: the policy induced by
``exact_flows`` reproduces ``exact_target_distribution`` up to float error.
"""

from __future__ import annotations

import numpy as np

from .envs import State, Task
from .objective import TablePolicy


def exact_target_distribution(task: Task) -> dict[State, float]:
    """p(x) = R(x) / sum of all terminal rewards, over reachable terminals."""
    terms = task.enumerate_terminals()
    z = sum(r for _, r in terms)
    if z <= 0:
        raise ValueError("total reward must be positive")
    return {s: r / z for s, r in terms}


def exact_flows(task: Task) -> dict[tuple[State, int], float]:
    """Edge flows satisfying flow consistency, splitting each state's required
    inflow equally among its parents; reverse topological sweep."""
    node_flow: dict[State, float] = {}
    edge_flow: dict[tuple[State, int], float] = {}
    for s in reversed(task.states):
        if task.is_terminal(s):
            node_flow[s] = task.reward(s)
        else:
            total = 0.0
            for a in task.valid_actions(s):
                child = task.transition(s, a)
                f = node_flow[child] / len(task.parents(child))
                edge_flow[(s, a)] = f
                total += f
            node_flow[s] = total
    return edge_flow


def flow_policy(task: Task, edge_flow: dict[tuple[State, int], float]) -> TablePolicy:
    """Forward policy induced by an edge-flow assignment."""
    table: dict[State, np.ndarray] = {}
    for s in task.states:
        if task.is_terminal(s):
            continue
        acts = task.valid_actions(s)
        f = np.array([edge_flow[(s, a)] for a in acts])
        total = f.sum()
        if total <= 0:
            raise ValueError(f"no outgoing flow at {s}")
        p = np.zeros(task.action_count)
        p[list(acts)] = f / total
        table[s] = p
    return TablePolicy(task, table)


def exact_visit_mass(task: Task, policy) -> dict[State, float]:
    """Probability each reachable state is visited by a policy rollout."""
    mass = {s: 0.0 for s in task.states}
    mass[task.start] = 1.0
    for s in task.states:
        if task.is_terminal(s) or mass[s] == 0.0:
            continue
        probs = policy.probs(s)
        for a in task.valid_actions(s):
            mass[task.transition(s, a)] += mass[s] * probs[a]
    return mass


def exact_policy_distribution(task: Task, policy) -> dict[State, float]:
    """Exact terminal-state distribution of a policy, by forward DP."""
    mass = exact_visit_mass(task, policy)
    return {s: mass[s] for s in task.terminals}
