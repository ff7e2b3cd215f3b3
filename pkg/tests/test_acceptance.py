"""Acceptance gate: one test per shipped guarantee.

Each test prints a single pass/fail line under ``pytest -v``. The desk-scale
experiment runs are shared through session fixtures because several
guarantees read different columns of the same artifacts. These are the
slowest tests in the suite (full multi-seed training runs).
"""

from pathlib import Path

import numpy as np
import pytest

from pgflow.config import load_config
from pgflow.envs import (
    CLIFF_WALKING,
    FROZEN_LAKE,
    GRID_WORLD,
    Task,
    make_task,
)
from pgflow.harness import run_experiment
from pgflow.meta import MetaConfig, average_params, per_task_optimum_train
from pgflow.metrics import l1_exact, read_metrics_csv
from pgflow.net import TabularFlowNet, net_for_task
from pgflow.objective import NetPolicy, fm_loss, fm_loss_grad, sample_batch
from pgflow.oracle import exact_flows, exact_policy_distribution, exact_target_distribution, flow_policy
from pgflow.pmeta import (
    aggregate_relaxed,
    aux_meta_update,
    prox_objective_grad,
    read_rounds_csv,
    solve_proximal,
)
from pgflow.theory import zeta_bound

CONFIG_DIR = Path(__file__).resolve().parent.parent / "demos" / "configs"

ALGOS = ("gflownets", "gflownets_star", "gflowmeta", "pgflowmeta_mp", "pgflowmeta_pp")


# -- shared experiment runs ----------------------------------------------------

def _run(name: str, tmp_path_factory) -> Path:
    cfg = load_config(CONFIG_DIR / f"{name}.cfg")
    return Path(run_experiment(cfg, tmp_path_factory.mktemp(name)))


@pytest.fixture(scope="session")
def fl_run(tmp_path_factory):
    return _run("frozen_lake_desk", tmp_path_factory)


@pytest.fixture(scope="session")
def fl_l1_run(tmp_path_factory):
    return _run("frozen_lake_l1", tmp_path_factory)


@pytest.fixture(scope="session")
def gw_run(tmp_path_factory):
    return _run("grid_world_desk", tmp_path_factory)


@pytest.fixture(scope="session")
def cw_run(tmp_path_factory):
    return _run("cliff_walking_desk", tmp_path_factory)


@pytest.fixture(scope="session")
def cw_sim_run(tmp_path_factory):
    return _run("cliff_walking_similar", tmp_path_factory)


def _final_mean(run: Path, seed: int, algo: str, attr: str) -> float:
    recs = read_metrics_csv(run / "metrics" / f"seed{seed}_{algo}.csv")
    last = max(r.round for r in recs)
    return float(np.mean([getattr(r, attr) for r in recs if r.round == last]))


def _seeds(run: Path) -> list[int]:
    stems = (p.stem for p in (run / "metrics").glob("seed*_gflowmeta.csv"))
    return sorted(int(s.split("_")[0][4:]) for s in stems)


def _ordering_ok(run: Path, seed: int) -> tuple[bool, bool]:
    r = {a: _final_mean(run, seed, a, "avg_reward") for a in ALGOS}
    ordering = (
        r["pgflowmeta_pp"] >= r["pgflowmeta_mp"] >= r["gflowmeta"] >= r["gflownets"]
    )
    near_star = abs(r["pgflowmeta_pp"] - r["gflownets_star"]) <= 0.1
    return ordering, near_star


# -- criterion 1: analytic gradients vs central finite differences -------------

def _fd_grad(fn, params: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.empty_like(params)
    for i in range(params.size):
        p = params.copy()
        p[i] += h
        up = fn(p)
        p[i] -= 2 * h
        dn = fn(p)
        g[i] = (up - dn) / (2 * h)
    return g


def _grad_cases():
    tasks = [
        make_task(GRID_WORLD, 0, grid_size=(2, 2), r0=0.03),
        make_task(GRID_WORLD, 0, grid_size=(4, 4), r0=0.07),
        make_task(FROZEN_LAKE, 5, grid_size=(4, 4), n_holes=1),
        make_task(CLIFF_WALKING, 0, grid_size=(4, 4), cliff_length=2),
    ]
    for task in tasks:
        net = net_for_task(task, (5,))
        for seed in range(6):
            rng = np.random.default_rng(100 + seed)
            params = net.init_params(seed)
            batch = sample_batch(task, net, params, rng, 3, 0.2)
            yield task, net, params, batch, rng


def test_criterion_01_gradient_exactness():
    checked = 0
    for task, net, params, batch, rng in _grad_cases():
        loss, grad = fm_loss_grad(task, net, params, batch)
        fd = _fd_grad(lambda p: fm_loss(task, net, p, batch), params)
        assert np.linalg.norm(fd - grad) <= 1e-5 * np.linalg.norm(fd)

        anchor = params + 0.1 * rng.standard_normal(params.size)
        lam = 7.0
        _, pgrad = prox_objective_grad(task, net, params, anchor, lam, batch)
        pfd = _fd_grad(
            lambda p: prox_objective_grad(task, net, p, anchor, lam, batch)[0], params
        )
        assert np.linalg.norm(pfd - pgrad) <= 1e-5 * np.linalg.norm(pfd)
        checked += 1
    assert checked >= 20


# -- criterion 2: exact flows induce the target distribution -------------------

def test_criterion_02_oracle_keystone():
    tasks = [
        make_task(GRID_WORLD, 0, grid_size=(8, 8), r0=0.05),
        make_task(FROZEN_LAKE, 0, grid_size=(8, 8), n_holes=4),
        make_task(CLIFF_WALKING, 0, grid_size=(4, 12), cliff_length=8),
    ]
    for task in tasks:
        policy = flow_policy(task, exact_flows(task))
        induced = exact_policy_distribution(task, policy)
        target = exact_target_distribution(task)
        assert set(induced) == set(target)
        gap = max(abs(induced[s] - target[s]) for s in target)
        assert gap <= 1e-8, f"{task}: terminal distribution off by {gap}"


# -- criterion 3: loss and gradient vanish at the exact flows ------------------

def test_criterion_03_loss_zero_at_exact_flows():
    task = make_task(GRID_WORLD, 0, grid_size=(8, 8), r0=0.05)
    net = TabularFlowNet(task)
    params = net.params_from_flows(exact_flows(task))
    rng = np.random.default_rng(0)
    batch = sample_batch(task, net, params, rng, 16, 0.1)
    loss, grad = fm_loss_grad(task, net, params, batch)
    assert loss <= 1e-10
    assert np.linalg.norm(grad) <= 1e-8


# -- criterion 4: update identities hold bit-for-bit ---------------------------

def test_criterion_04_algorithm_identities():
    rng = np.random.default_rng(3)
    vs = [rng.standard_normal(40) for _ in range(4)]

    # plain-mean aggregation, fixed summation order
    total = vs[0].copy()
    for v in vs[1:]:
        total += v
    assert np.array_equal(average_params(vs), 0.25 * total)
    assert np.array_equal(average_params([vs[0]]), vs[0])

    # auxiliary-variable meta update
    w, theta = vs[0], vs[1]
    eta, lam = 0.07, 11.0
    assert np.array_equal(aux_meta_update(w, theta, eta, lam), w - eta * lam * (w - theta))

    # relaxed aggregation at beta = 1 collapses to the plain mean
    assert np.array_equal(aggregate_relaxed(vs[0], vs[1:], 1.0), average_params(vs[1:]))


# -- criterion 5: byte-identical reruns ----------------------------------------

def test_criterion_05_determinism(tmp_path):
    cfg = load_config(CONFIG_DIR / "smoke.cfg")
    a = Path(run_experiment(cfg, tmp_path / "a"))
    b = Path(run_experiment(cfg, tmp_path / "b"))
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


# -- criterion 6: single-task training converges -------------------------------

def test_criterion_06_single_task_convergence():
    task = make_task(FROZEN_LAKE, 0, grid_size=(4, 4), n_holes=1)
    net = net_for_task(task, (32, 32))
    mc = MetaConfig(
        rounds=1, inner_steps=1, batch_size=16, eta=0.005, explore_eps=0.4, seed=0
    )
    best = {"l1": np.inf}

    def on_step(step, w):
        if step % 100 == 0:
            best["l1"] = min(best["l1"], l1_exact(task, NetPolicy(task, net, w)))

    per_task_optimum_train(task, net, mc, 5000, plateau_window=5001, on_step=on_step)
    assert best["l1"] <= 0.05


# -- criterion 7: frozen lake reward ceiling -----------------------------------

def test_criterion_07_frozen_lake_reward_ceiling(fl_run):
    rewards = [
        _final_mean(fl_run, s, "pgflowmeta_pp", "avg_reward") for s in _seeds(fl_run)
    ]
    assert abs(float(np.mean(rewards)) - 1.0) <= 0.02


# -- criterion 8: reward ordering on distinct tasks ----------------------------

def test_criterion_08_ordering_grid_world(gw_run):
    ok = sum(all(_ordering_ok(gw_run, s)) for s in _seeds(gw_run))
    assert ok >= 4, f"ordering holds on only {ok}/5 seeds"


def test_criterion_08_ordering_frozen_lake(fl_run):
    ok = sum(all(_ordering_ok(fl_run, s)) for s in _seeds(fl_run))
    assert ok >= 4, f"ordering holds on only {ok}/5 seeds"


def test_criterion_08_ordering_cliff_walking(cw_run):
    ok = sum(all(_ordering_ok(cw_run, s)) for s in _seeds(cw_run))
    assert ok >= 4, f"ordering holds on only {ok}/5 seeds"


# -- criterion 9: robustness to task heterogeneity -----------------------------

def test_criterion_09_similar_to_distinct_drop(cw_run, cw_sim_run):
    ok = 0
    for s in _seeds(cw_run):
        drop = {
            a: _final_mean(cw_sim_run, s, a, "avg_reward")
            - _final_mean(cw_run, s, a, "avg_reward")
            for a in ("gflowmeta", "pgflowmeta_mp", "pgflowmeta_pp")
        }
        ok += drop["pgflowmeta_mp"] <= drop["gflowmeta"] and (
            drop["pgflowmeta_pp"] <= drop["gflowmeta"]
        )
    assert ok >= 4, f"drop comparison holds on only {ok}/5 seeds"


# -- criterion 10: empirical L1 ordering ---------------------------------------

def test_criterion_10_l1_ordering(fl_l1_run):
    seeds = _seeds(fl_l1_run)
    avg = {
        a: float(np.mean([_final_mean(fl_l1_run, s, a, "l1") for s in seeds]))
        for a in ("gflownets", "gflowmeta", "pgflowmeta_pp")
    }
    assert avg["pgflowmeta_pp"] < avg["gflowmeta"] < avg["gflownets"], avg


# -- criterion 11: inexact-prox accuracy bound ---------------------------------

def test_criterion_11_prox_accuracy_bound():
    lam, kappa1, delta, lr, dim = 8.0, 0.5, 0.05, 0.05, 6
    bound = zeta_bound(kappa1, delta, lam, 1.0)
    rng = np.random.default_rng(17)
    holds = 0
    for _ in range(100):
        a = rng.standard_normal(dim)
        w = rng.standard_normal(dim)
        noise = rng.standard_normal(dim)
        xi = kappa1 * noise / np.linalg.norm(noise)
        center = a + xi

        def loss_grad(theta):
            d = theta - center
            return 0.5 * float(d @ d), d

        theta_hat, stats = solve_proximal(loss_grad, w, lam, lr, delta, 500)
        assert stats.converged
        theta_star = (a + lam * w) / (1.0 + lam)
        holds += float(np.sum((theta_hat - theta_star) ** 2)) <= bound
    assert holds == 100


# -- criterion 12: meta-gradient decay and bounded personalization gap ---------

def test_criterion_12_meta_gradient_decay(fl_run):
    for s in _seeds(fl_run):
        recs = read_rounds_csv(fl_run / "traces" / f"seed{s}_pgflowmeta_rounds.csv")
        runmin5 = min(r.grad_sq for r in recs if r.round <= 5)
        runmin30 = min(r.grad_sq for r in recs)
        assert runmin30 < runmin5, f"seed {s}: no meta-gradient progress after round 5"
        gap5 = next(r.theta_w_gap_avg for r in recs if r.round == 5)
        gapmax = max(r.theta_w_gap_avg for r in recs if r.round >= 5)
        assert gapmax <= 10.0 * gap5, f"seed {s}: personalization gap blew up"
