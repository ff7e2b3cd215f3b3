"""
Single-task flow matching from scratch
======================================

Plain SGD on the flow-matching loss, one task. The exact-policy L1 is
computed against the enumerated target distribution, so the curve below is
noise-free even though training itself is stochastic.
"""

from pgflow import make_task, net_for_task
from pgflow.meta import MetaConfig, per_task_optimum_train
from pgflow.metrics import l1_exact
from pgflow.objective import NetPolicy

task = make_task("frozen_lake", 0, grid_size=(4, 4), n_holes=1)
net = net_for_task(task, (32, 32))
config = MetaConfig(
    rounds=1, inner_steps=1, batch_size=16, eta=0.005, explore_eps=0.4, seed=0
)

print(task, "| params:", net.n_params)
curve = []


def watch(step, params):
    if step % 250 == 0:
        curve.append((step, l1_exact(task, NetPolicy(task, net, params))))


params, trace = per_task_optimum_train(
    task, net, config, budget=2000, plateau_window=2001, on_step=watch
)

print("step  l1_exact")
for step, v in curve:
    print(f"{step:5d}  {v:.4f}")
best_step, best = min(curve, key=lambda sv: sv[1])
print(f"best: {best:.4f} at step {best_step}")
print("batches consumed:", trace.batches_consumed)
print("final loss:", round(trace.steps[-1].loss, 5))
