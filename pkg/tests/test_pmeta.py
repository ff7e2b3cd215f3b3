import numpy as np
import pytest

from pgflow import envs
from pgflow.envs import make_task
from pgflow.meta import average_params
from pgflow.net import net_for_task, param_norm
from pgflow.objective import sample_batch
from pgflow.pmeta import (
    PMetaConfig,
    PTRACE_COLUMNS,
    ROUNDS_COLUMNS,
    aggregate_relaxed,
    aux_meta_update,
    meta_gradient,
    pgflowmeta_train,
    prox_objective_grad,
    read_rounds_csv,
    solve_proximal,
    write_ptrace_csv,
    write_rounds_csv,
)
from pgflow.objective import fm_loss_grad


def quadratic(a):
    """loss(theta) = 0.5 ||theta - a||^2 with its exact gradient."""

    def fn(theta):
        d = theta - a
        return 0.5 * float(d @ d), d

    return fn


def test_meta_gradient_and_aux_update_formulas(rng):
    w = rng.normal(size=7)
    th = rng.normal(size=7)
    g = meta_gradient(w, th, 15.0)
    np.testing.assert_array_equal(g, 15.0 * (w - th))
    upd = aux_meta_update(w, th, 0.005, 15.0)
    np.testing.assert_array_equal(upd, w - 0.005 * 15.0 * (w - th))


def test_aggregate_relaxed_beta_one_equals_mean(rng):
    w_prev = rng.normal(size=9)
    locals_ = [rng.normal(size=9) for _ in range(3)]
    got = aggregate_relaxed(w_prev, locals_, 1.0)
    assert np.array_equal(got, average_params(locals_))


def test_aggregate_relaxed_midpoint(rng):
    w_prev = rng.normal(size=9)
    locals_ = [rng.normal(size=9) for _ in range(2)]
    got = aggregate_relaxed(w_prev, locals_, 0.5)
    expect = 0.5 * w_prev + 0.5 * average_params(locals_)
    np.testing.assert_allclose(got, expect, rtol=1e-15)


def test_solve_proximal_quadratic_reaches_closed_form(rng):
    a = rng.normal(size=6)
    w = rng.normal(size=6)
    lam = 15.0
    theta_star = (a + lam * w) / (1.0 + lam)
    theta, stats = solve_proximal(quadratic(a), w, lam, 0.05, 1e-10, 500)
    assert stats.converged
    assert stats.grad_norm <= 1e-10
    np.testing.assert_allclose(theta, theta_star, atol=1e-10)


def test_solve_proximal_warm_start_at_optimum_is_instant(rng):
    a = rng.normal(size=6)
    w = rng.normal(size=6)
    lam = 4.0
    theta_star = (a + lam * w) / (1.0 + lam)
    theta, stats = solve_proximal(quadratic(a), w, lam, 0.05, 1e-8, 50,
                                  theta0=theta_star)
    assert stats.steps == 0 and stats.converged
    np.testing.assert_allclose(theta, theta_star, atol=1e-12)


def test_solve_proximal_zero_budget_returns_start(rng):
    a = rng.normal(size=6)
    w = rng.normal(size=6)
    theta, stats = solve_proximal(quadratic(a), w, 2.0, 0.1, 1e-12, 0)
    assert np.array_equal(theta, w)
    assert stats.steps == 0 and not stats.converged


def test_solve_proximal_inexact_stop_honors_delta(rng):
    a = rng.normal(size=6)
    w = rng.normal(size=6)
    theta, stats = solve_proximal(quadratic(a), w, 15.0, 0.05, 0.5, 500)
    assert stats.converged and stats.grad_norm <= 0.5
    # the returned point is within delta / strong-convexity of the minimizer
    theta_star = (a + 15.0 * w) / 16.0
    assert param_norm(theta - theta_star) <= 0.5 / (1.0 + 15.0)


def test_prox_objective_grad_is_loss_plus_ridge(gw2, rng):
    net = net_for_task(gw2, [6])
    params = net.init_params(1)
    theta = params + 0.1 * rng.normal(size=params.shape)
    batch = sample_batch(gw2, net, params, np.random.default_rng(3), 4, 0.1)
    lam = 7.0
    val, grad = prox_objective_grad(gw2, net, theta, params, lam, batch)
    loss, lgrad = fm_loss_grad(gw2, net, theta, batch)
    diff = theta - params
    assert val == pytest.approx(loss + 0.5 * lam * float(diff @ diff), rel=1e-12)
    np.testing.assert_allclose(grad, lgrad + lam * diff, rtol=1e-12)


def synthetic_setup(small_net, n_tasks, seed=11):
    tasks = [
        make_task(envs.GRID_WORLD, seed=0, grid_size=(4, 4), r0=0.01 * (k + 1))
        for k in range(n_tasks)
    ]
    gen = np.random.default_rng(seed)
    anchors = {id(t): gen.normal(size=small_net.n_params) for t in tasks}

    def batch_source(task, net, params, rng, config):
        return 1.0

    def loss_grad(task, net, params, batch):
        d = params - anchors[id(task)]
        return 0.5 * float(d @ d), d

    return tasks, anchors, batch_source, loss_grad


def test_pgflowmeta_quadratic_converges_to_anchor_mean(small_net):
    # with quadratic task losses the personalized solve has a closed form and
    # the meta vector must contract geometrically onto the anchor mean
    tasks, anchors, batch_source, loss_grad = synthetic_setup(small_net, 3)
    config = PMetaConfig(
        rounds=12, inner_steps=5, batch_size=1, eta=0.2, n_tasks=3, seed=21,
        lam=15.0, beta=1.0, inner_lr=0.05, delta=1e-10,
        max_inner_solve_steps=400,
    )
    result = pgflowmeta_train(tasks, small_net, config,
                              batch_source=batch_source, loss_grad=loss_grad)
    a_bar = average_params([anchors[id(t)] for t in tasks])
    w0 = small_net.init_params(21)
    assert param_norm(result.w - a_bar) < 1e-4 * param_norm(w0 - a_bar)

    # replay with exact inner solutions: contraction factor eta*lam/(1+lam)
    c = config.eta * config.lam / (1.0 + config.lam)
    w_ref = w0.copy()
    for _ in range(config.rounds):
        locals_ = []
        for t in tasks:
            w_i = w_ref.copy()
            for _ in range(config.inner_steps):
                w_i = w_i - c * (w_i - anchors[id(t)])
            locals_.append(w_i)
        w_ref = aggregate_relaxed(w_ref, locals_, config.beta)
    np.testing.assert_allclose(result.w, w_ref, atol=1e-7)

    # stationarity measure decreases every round; gap shrinks as well
    grads = [rec.grad_sq for rec in result.round_records]
    assert all(b < a for a, b in zip(grads, grads[1:]))
    gaps = [rec.theta_w_gap_avg for rec in result.round_records]
    assert gaps[-1] < gaps[0]

    # thetas sit between the anchor and the aux vector, so pp beats mp
    assert len(result.thetas) == 3
    assert all(s.pp_loss <= s.mp_loss for s in result.step_records)
    assert result.trace.visits == {}   # sentinel batches are never logged
    assert result.trace.batches_consumed == 12 * 5 * 3


def test_pgflowmeta_warm_start_toggle(small_net):
    tasks, anchors, batch_source, _ = synthetic_setup(small_net, 1)
    a = anchors[id(tasks[0])]
    calls = []

    def loss_grad(task, net, params, batch):
        calls.append(params.copy())
        d = params - a
        return 0.5 * float(d @ d), d

    kw = dict(
        rounds=1, inner_steps=2, batch_size=1, eta=0.25, n_tasks=1, seed=21,
        lam=4.0, inner_lr=0.05, delta=0.0, max_inner_solve_steps=1,
    )
    w0 = small_net.init_params(21)
    lr, lam, eta = 0.05, 4.0, 0.25
    # solve r=1 starts at w0 and takes one gradient step
    theta1 = w0 - lr * ((w0 - a) + lam * (w0 - w0))
    w1 = w0 - eta * lam * (w0 - theta1)

    # each inner step makes 4 loss_grad calls: two inside the solve (start
    # point and post-step point) then the pp and mp evaluations
    calls.clear()
    pgflowmeta_train(tasks, small_net, PMetaConfig(**kw, warm_start=True),
                     batch_source=batch_source, loss_grad=loss_grad)
    np.testing.assert_allclose(calls[0], w0, rtol=1e-15)
    np.testing.assert_allclose(calls[4], theta1, rtol=1e-12)

    calls.clear()
    pgflowmeta_train(tasks, small_net, PMetaConfig(**kw, warm_start=False),
                     batch_source=batch_source, loss_grad=loss_grad)
    np.testing.assert_allclose(calls[4], w1, rtol=1e-12)


def test_pgflowmeta_single_task_beta_one_keeps_local(small_net):
    tasks, anchors, batch_source, loss_grad = synthetic_setup(small_net, 1)
    config = PMetaConfig(rounds=1, inner_steps=1, batch_size=1, eta=0.1,
                         n_tasks=1, seed=5, lam=2.0, inner_lr=0.05,
                         delta=1e-9, max_inner_solve_steps=300)
    result = pgflowmeta_train(tasks, small_net, config,
                              batch_source=batch_source, loss_grad=loss_grad)
    # beta = 1, N = 1: the next meta vector is exactly the single local vector
    w0 = small_net.init_params(5)
    a = anchors[id(tasks[0])]
    theta_star = (a + 2.0 * w0) / 3.0
    expect = aux_meta_update(w0, theta_star, 0.1, 2.0)
    np.testing.assert_allclose(result.w, expect, atol=1e-8)


def test_pgflowmeta_task_count_mismatch(small_net):
    tasks, _, batch_source, loss_grad = synthetic_setup(small_net, 2)
    config = PMetaConfig(n_tasks=3)
    with pytest.raises(ValueError):
        pgflowmeta_train(tasks, small_net, config,
                         batch_source=batch_source, loss_grad=loss_grad)


def test_pmeta_config_validation():
    with pytest.raises(ValueError):
        PMetaConfig(lam=0.0)
    with pytest.raises(ValueError):
        PMetaConfig(beta=0.0)
    with pytest.raises(ValueError):
        PMetaConfig(inner_lr=-1.0)
    with pytest.raises(ValueError):
        PMetaConfig(delta=-0.1)
    with pytest.raises(ValueError):
        PMetaConfig(rounds=0)


def real_run(gw2, seed=3):
    net = net_for_task(gw2, [6])
    config = PMetaConfig(rounds=2, inner_steps=2, batch_size=2, eta=0.005,
                         n_tasks=1, seed=seed, lam=15.0, inner_lr=1e-3,
                         delta=1e-2, max_inner_solve_steps=3)
    return pgflowmeta_train([gw2], net, config), net


def test_pgflowmeta_real_objective_deterministic(gw2):
    r1, _ = real_run(gw2)
    r2, _ = real_run(gw2)
    assert np.array_equal(r1.w, r2.w)
    assert all(np.array_equal(a, b) for a, b in zip(r1.thetas, r2.thetas))
    assert r1.step_records == r2.step_records


def test_pgflowmeta_records_and_visits(gw2):
    result, net = real_run(gw2)
    assert len(result.step_records) == 2 * 2 * 1
    assert len(result.round_records) == 2
    assert result.w.shape == (net.n_params,)
    assert all(th.shape == (net.n_params,) for th in result.thetas)
    assert len(result.trace.visits[0]) > 0
    assert all(s.solve_steps <= 3 for s in result.step_records)


def test_rounds_csv_round_trip(tmp_path, gw2):
    result, _ = real_run(gw2)
    path = tmp_path / "rounds.csv"
    write_rounds_csv(path, result)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(ROUNDS_COLUMNS)
    back = read_rounds_csv(path)
    assert [r.round for r in back] == [r.round for r in result.round_records]
    assert [r.grad_sq for r in back] == [r.grad_sq for r in result.round_records]
    assert [r.theta_w_gap_avg for r in back] == [
        r.theta_w_gap_avg for r in result.round_records
    ]


def test_rounds_csv_running_min_column(tmp_path, gw2):
    import csv as _csv

    result, _ = real_run(gw2)
    path = tmp_path / "rounds.csv"
    write_rounds_csv(path, result)
    with open(path, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    runmin = [float(r["grad_sq_runmin"]) for r in rows]
    assert all(b <= a for a, b in zip(runmin, runmin[1:]))
    assert runmin[0] == float(rows[0]["grad_sq"])


def test_ptrace_csv(tmp_path, gw2):
    result, _ = real_run(gw2)
    path = tmp_path / "ptrace.csv"
    write_ptrace_csv(path, result)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(PTRACE_COLUMNS)
    assert len(lines) == 1 + len(result.step_records)
