"""
The toy task
============

A mixture of Gaussian mixtures: every class owns a few Gaussian components
scattered in the plane. The training set is split into worker shards that
each favour a subset of components, so local models drift apart.
"""

import numpy as np

from asyncloco.data import (Shard, eval_spec, generate_dataset, make_mixture_spec, next_batch,
                            sample_mixture, split_shards)
from asyncloco.model import MlpConfig, backward, eval_metrics, init_params
from asyncloco.optim import AdamWState, adamw_step

# %%
# 4 classes x 4 components in 2-D, 8192 training points.
spec = make_mixture_spec(num_classes=4, components_per_class=4, dim=2, num_points=8192, seed=0)
train, comps = sample_mixture(spec)
print("component means (class = row // 4):")
print(np.round(spec.means, 2))

# %%
# Each shard keeps 75% of its "home" components and a random sprinkle of the rest.
shards = split_shards(train, 4, "by_component", seed=0, components=comps, affinity=0.75)
for s in shards:
    share = np.bincount(s.components, minlength=16) / s.size
    home = share[s.id::4].sum()
    print(f"shard {s.id}: {s.size} points, {home:.0%} from components {s.id}, {s.id + 4}, ...")

# %%
# For reference, one model trained on pooled data with AdamW.
evalset = generate_dataset(eval_spec(spec))
cfg = MlpConfig(hidden_dims=(32,))
theta = init_params(cfg, 0)
state = AdamWState.zeros(cfg.num_params)
pooled = Shard(0, train)
rng = np.random.default_rng(0)
for step in range(1, 3001):
    _, g = backward(theta, next_batch(pooled, 32, rng))
    state, values = adamw_step(state, theta.values, g.values, 1e-3)
    theta = theta.with_values(values)
    if step % 1000 == 0:
        loss, ppl, acc = eval_metrics(theta, evalset)
        print(f"step {step}: eval loss {loss:.4f}, accuracy {acc:.3f}")
