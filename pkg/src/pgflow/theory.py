"""Numeric diagnostics for the smoothness/variance constants and the
convergence statements they imply.

Nothing here is a proof: constants are computed exactly where the definition
is combinatorial (reward bound, trajectory length, branching) and estimated
by sampling where it is analytic (flow-net smoothness, gradient variance).
The convergence report just post-processes a training trace.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import Task
from .net import FlowNet, encoding_matrix
from .objective import (
    NetPolicy,
    compile_batch,
    compile_expectation,
    loss_grad_from_plan,
    sample_batch,
)
from .oracle import exact_visit_mass


def compute_env_constants(task: Task) -> tuple[float, int, int]:
    """(H0, H1, H2): max terminal reward, max moves per trajectory, max
    branching (parents or children) over reachable states."""
    h0 = max(r for _, r in task.enumerate_terminals())
    depth = {task.start: 0}
    h1 = 0
    for s in task.states:
        if s == task.start:
            continue
        depth[s] = 1 + max(depth[p] for p, _ in task.parents(s))
        h1 = max(h1, depth[s])
    h2 = 1
    for s in task.states:
        h2 = max(h2, len(task.parents(s)))
        if not task.is_terminal(s):
            h2 = max(h2, len(task.valid_actions(s)))
    return float(h0), h1, h2


def compute_L_ell(h0: float, h1: int, h2: int, b: float, l0: float, l1: float) -> float:
    """Smoothness constant of the per-task loss from the primitive bounds."""
    return h1 * ((h0 + 2.0 * h2 * b) * 2.0 * h2 * l1 + 4.0 * h2**2 * l0**2)


def zeta_bound(kappa1: float, delta: float, lam: float, l_ell: float) -> float:
    """Inexact-prox accuracy bound; infinite when lam <= L_ell (constraint
    violated, reported rather than raised)."""
    if lam <= l_ell:
        return math.inf
    return 2.0 * (kappa1**2 + delta**2) / (lam - l_ell) ** 2


def eta_theory(l_meta: float, lam: float) -> float:
    """Reference step size 1/(70 * L * lam^2); reported, never enforced."""
    return 1.0 / (70.0 * l_meta * lam**2)


# -- sampled estimates ---------------------------------------------------------

def _jacobian_gap_sq(net: FlowNet, task: Task, p1, p2, f1, f2) -> float:
    """Squared Frobenius distance between the flow Jacobians at p1 and p2,
    accumulated row by row so the Jacobians are never materialized."""
    x = encoding_matrix(task)
    total = 0.0
    for i in range(x.shape[0]):
        xi = x[i : i + 1]
        for a in range(net.out_dim):
            cot = np.zeros((1, net.out_dim))
            cot[0, a] = f1[i, a]   # d flow / d logflow = flow
            row1 = net.backprop(p1, xi, cot)
            cot[0, a] = f2[i, a]
            row2 = net.backprop(p2, xi, cot)
            diff = row1 - row2
            total += float(diff @ diff)
    return total


def estimate_smoothness(
    net: FlowNet,
    task: Task,
    center: np.ndarray,
    radius: float,
    n_pairs: int,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """(B, L0, L1) estimates: max flow norm, flow Lipschitz constant, and
    flow-gradient Lipschitz constant, sampled in a box around ``center``."""
    x = encoding_matrix(task)
    b_hat = 0.0
    l0_hat = 0.0
    l1_hat = 0.0
    for _ in range(n_pairs):
        p1 = center + rng.uniform(-radius, radius, size=center.shape)
        p2 = center + rng.uniform(-radius, radius, size=center.shape)
        gap = float(np.linalg.norm(p1 - p2))
        if gap == 0.0:
            continue
        f1 = np.exp(net.log_flows(p1, x))
        f2 = np.exp(net.log_flows(p2, x))
        b_hat = max(b_hat, float(np.linalg.norm(f1)), float(np.linalg.norm(f2)))
        l0_hat = max(l0_hat, float(np.linalg.norm(f1 - f2)) / gap)
        jgap = np.sqrt(_jacobian_gap_sq(net, task, p1, p2, f1, f2))
        l1_hat = max(l1_hat, float(jgap) / gap)
    return b_hat, l0_hat, l1_hat


def expected_loss_grad(
    task: Task, net, params: np.ndarray, explore_eps: float
) -> tuple[float, np.ndarray]:
    """Exact expectation of the batch loss/gradient under the sampling policy
    at ``params`` (enumeration via visit probabilities, no sampling)."""
    policy = NetPolicy(task, net, params, explore_eps)
    mass = exact_visit_mass(task, policy)
    plan = compile_expectation(task, mass)
    return loss_grad_from_plan(task, net, params, plan)


def estimate_kappa1(
    task: Task,
    net,
    params: np.ndarray,
    n_batches: int,
    batch_size: int,
    explore_eps: float,
    rng: np.random.Generator,
) -> float:
    """RMS deviation of batch gradients from the exact expected gradient."""
    _, gbar = expected_loss_grad(task, net, params, explore_eps)
    devs = []
    for _ in range(n_batches):
        batch = sample_batch(task, net, params, rng, batch_size, explore_eps)
        _, g = loss_grad_from_plan(task, net, params, compile_batch(task, batch))
        devs.append(float(np.sum((g - gbar) ** 2)))
    return float(np.sqrt(np.mean(devs)))


def estimate_kappa2(
    tasks: list[Task], net, params: np.ndarray, explore_eps: float
) -> float:
    """Max deviation of per-task expected gradients from their mean."""
    grads = [expected_loss_grad(t, net, params, explore_eps)[1] for t in tasks]
    mean = np.mean(grads, axis=0)
    return float(max(np.linalg.norm(g - mean) for g in grads))


# -- report --------------------------------------------------------------------

@dataclass
class TheoryReport:
    env: str
    h0: float
    h1: int
    h2: int
    b_hat: float
    l0_hat: float
    l1_hat: float
    l_ell: float
    lam: float
    lambda_exceeds_l_ell: bool
    lambda_exceeds_2l_ell: bool
    kappa1_hat: float
    kappa2_hat: float
    delta: float
    zeta_sq: float
    l_meta: float
    eta_theory: float
    eta_configured: float
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = asdict(self)
        payload["zeta_sq"] = None if math.isinf(self.zeta_sq) else self.zeta_sq
        return json.dumps(payload, sort_keys=True, indent=2)


def build_theory_report(
    tasks: list[Task],
    net: FlowNet,
    params: np.ndarray,
    *,
    lam: float,
    delta: float,
    eta_configured: float,
    explore_eps: float = 0.1,
    radius: float = 0.25,
    n_pairs: int = 4,
    kappa1_batches: int = 8,
    batch_size: int = 16,
    seed: int = 0,
) -> TheoryReport:
    rng = np.random.default_rng(seed)
    h0 = h1 = h2 = 0
    b = l0 = l1 = 0.0
    for task in tasks:
        th0, th1, th2 = compute_env_constants(task)
        h0, h1, h2 = max(h0, th0), max(h1, th1), max(h2, th2)
        tb, tl0, tl1 = estimate_smoothness(net, task, params, radius, n_pairs, rng)
        b, l0, l1 = max(b, tb), max(l0, tl0), max(l1, tl1)
    l_ell = compute_L_ell(h0, h1, h2, b, l0, l1)
    kappa1 = max(
        estimate_kappa1(t, net, params, kappa1_batches, batch_size, explore_eps, rng)
        for t in tasks
    )
    kappa2 = estimate_kappa2(tasks, net, params, explore_eps) if len(tasks) > 1 else 0.0
    l_meta = lam  # smoothness of the meta objective when lam > 2 L_ell
    return TheoryReport(
        env=tasks[0].spec.env,
        h0=h0, h1=h1, h2=h2,
        b_hat=b, l0_hat=l0, l1_hat=l1,
        l_ell=l_ell,
        lam=lam,
        lambda_exceeds_l_ell=lam > l_ell,
        lambda_exceeds_2l_ell=lam > 2.0 * l_ell,
        kappa1_hat=kappa1,
        kappa2_hat=kappa2,
        delta=delta,
        zeta_sq=zeta_bound(kappa1, delta, lam, l_ell),
        l_meta=l_meta,
        eta_theory=eta_theory(l_meta, lam),
        eta_configured=eta_configured,
        notes={
            "smoothness_estimates": "sampled lower bounds, not certified",
            "l_meta": "equals lam only under lam > 2 L_ell",
        },
    )


# -- convergence trace ----------------------------------------------------------

@dataclass
class ConvergenceReport:
    rounds: list[int]
    grad_sq: list[float]
    grad_sq_runmin: list[float]
    theta_w_gap_avg: list[float]
    fit_c: float
    fit_r2: float
    loglog_slope: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def convergence_trace_report(round_records) -> ConvergenceReport:
    """Post-process per-round scalars: running-min of the squared meta
    gradient, a least-squares fit of runmin against C/sqrt(t), and the
    log-log decay slope."""
    ts = [rec.round for rec in round_records]
    grad_sq = [rec.grad_sq for rec in round_records]
    gaps = [rec.theta_w_gap_avg for rec in round_records]
    runmin = []
    cur = math.inf
    for g in grad_sq:
        cur = min(cur, g)
        runmin.append(cur)
    t = np.asarray(ts, dtype=np.float64)
    y = np.asarray(runmin, dtype=np.float64)
    basis = 1.0 / np.sqrt(t)
    c = float((y @ basis) / (basis @ basis))
    resid = y - c * basis
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    if np.all(y > 0) and len(t) > 1:
        slope = float(np.polyfit(np.log(t), np.log(y), 1)[0])
    else:
        slope = 0.0
    return ConvergenceReport(ts, grad_sq, runmin, gaps, c, r2, slope)


def write_convergence_csv(path, report: ConvergenceReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "grad_sq", "grad_sq_runmin", "theta_w_gap_avg"))
        for i, t in enumerate(report.rounds):
            writer.writerow(
                [t, repr(report.grad_sq[i]), repr(report.grad_sq_runmin[i]),
                 repr(report.theta_w_gap_avg[i])]
            )
