"""
Delayed Nesterov with dynamic local updates
===========================================

Delayed Nesterov only touches the momentum buffer once every N updates and
applies plain SGD steps in between. Dynamic local updates give slow workers
fewer local steps so that everyone finishes a job at about the same time.
"""

from asyncloco.config import ExperimentConfig
from asyncloco.sim import run_experiment

base = ExperimentConfig()
variants = {
    "async nesterov": {},
    "delayed nesterov": dict(outer__strategy="delayed_nesterov"),
    "delayed nesterov + dylu": dict(outer__strategy="delayed_nesterov", sched__dylu=True),
    "sync diloco": dict(sched__mode="sync"),
}
logs = {name: run_experiment(base.with_values(**kw)) for name, kw in variants.items()}

# %%
# Same number of local steps for all runs.
for name, log in logs.items():
    print(f"{name:<26} loss {log.final.eval_loss:.4f} after {log.final.sim_time_s:>7.0f} s")

# %%
# Same simulated time: how far does each async run get while sync finishes?
budget = logs["sync diloco"].final.sim_time_s
for name, kw in variants.items():
    if name == "sync diloco":
        continue
    cfg = base.with_values(sched__t_max=10**9, sched__max_sim_time=budget,
                           inner__total_steps=base.shard_total_steps, **kw)
    log = run_experiment(cfg)
    print(f"{name:<26} loss {log.loss_at_time(budget):.4f} at t={budget:.0f} s "
          f"({log.clock.total_local_updates} local steps)")
print(f"{'sync diloco':<26} loss {logs['sync diloco'].final.eval_loss:.4f}")
