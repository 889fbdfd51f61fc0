"""
Momentum and stale updates
==========================

Synchronous rounds average four pseudo-gradients before one Nesterov step.
Asynchronously each one is applied as it arrives, so a slow worker's update
lands on a model that has moved on, and the momentum buffer amplifies it.
With plain SGD as the outer optimizer the asynchronous run is no worse.
"""

from asyncloco.config import ExperimentConfig
from asyncloco.sim import run_experiment

base = ExperimentConfig()  # very heterogeneous speeds (1, 0.5, 0.25, 0.125)
runs = {
    "sync  nesterov": base.with_values(sched__mode="sync"),
    "async nesterov": base,
    "sync  sgd": base.with_values(sched__mode="sync", outer__optimizer="sgd"),
    "async sgd": base.with_values(outer__optimizer="sgd"),
}

# %%
print(f"{'run':<16}{'final loss':>11}{'sim time':>10}{'updates':>9}")
for name, cfg in runs.items():
    log = run_experiment(cfg)
    r = log.final
    print(f"{name:<16}{r.eval_loss:>11.4f}{r.sim_time_s:>10.0f}{r.server_update:>9}")

# %%
# The staleness histogram of the async run shows how far behind updates arrive.
log = run_experiment(base)
stale = [s for _, s, _ in log.synced]
for s in sorted(set(stale)):
    print(f"staleness {s:>2}: {stale.count(s)} updates")
