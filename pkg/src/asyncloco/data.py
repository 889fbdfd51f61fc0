"""Mixture-of-mixtures Gaussian data, shard splitting and progress-balanced shard sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import Batch


@dataclass(frozen=True)
class MixtureSpec:
    """Each class is itself a mixture of ``components_per_class`` isotropic Gaussians.

    ``means`` has shape (num_classes * components_per_class, dim); component
    ``c * components_per_class + j`` belongs to class ``c``.
    """

    num_classes: int
    components_per_class: int
    dim: int
    means: np.ndarray
    covariance_scale: float = 0.05
    num_points: int = 8192
    seed: int = 0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        object.__setattr__(self, "means", means)
        if self.num_classes < 2 or self.components_per_class < 1 or self.dim < 1:
            raise ValueError("need num_classes >= 2, components_per_class >= 1, dim >= 1")
        if means.shape != (self.num_components, self.dim):
            raise ValueError(
                f"means must have shape {(self.num_components, self.dim)}, got {means.shape}"
            )
        if self.covariance_scale < 0:
            raise ValueError("covariance_scale must be non-negative")
        if self.num_points < 1:
            raise ValueError("num_points must be >= 1")

    @property
    def num_components(self) -> int:
        return self.num_classes * self.components_per_class


def make_mixture_spec(
    num_classes: int = 4,
    components_per_class: int = 4,
    dim: int = 2,
    covariance_scale: float = 0.05,
    num_points: int = 8192,
    seed: int = 0,
    spread: float = 1.5,
) -> MixtureSpec:
    """Spec with component means drawn uniformly from [-spread, spread]^dim."""
    rng = np.random.default_rng([seed, 0x6D65616E])
    means = rng.uniform(-spread, spread, size=(num_classes * components_per_class, dim))
    return MixtureSpec(num_classes, components_per_class, dim, means,
                       covariance_scale, num_points, seed)


def sample_mixture(spec: MixtureSpec) -> tuple[Batch, np.ndarray]:
    """Draw ``spec.num_points`` points; also return each point's component index."""
    rng = np.random.default_rng(spec.seed)
    n = spec.num_points
    labels = rng.integers(spec.num_classes, size=n)
    within = rng.integers(spec.components_per_class, size=n)
    comp = labels * spec.components_per_class + within
    noise = rng.standard_normal((n, spec.dim)) * np.sqrt(spec.covariance_scale)
    return Batch(spec.means[comp] + noise, labels), comp


def generate_dataset(spec: MixtureSpec) -> Batch:
    return sample_mixture(spec)[0]


@dataclass
class Shard:
    id: int
    points: Batch
    consumed: int = 0
    components: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.points)


def split_shards(
    dataset: Batch,
    k: int,
    mode: str = "iid",
    seed: int = 0,
    components: np.ndarray | None = None,
    affinity: float = 0.75,
) -> list[Shard]:
    """Partition ``dataset`` into ``k`` disjoint shards.

    ``iid``: random permutation split into near-equal parts.
    ``by_component``: a point from component ``j`` goes to shard ``j % k`` with
    probability ``affinity``, otherwise to a uniformly random shard.  Needs the
    per-point component indices from :func:`sample_mixture`.
    """
    n = len(dataset)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"cannot split {n} rows into {k} shards")
    rng = np.random.default_rng([seed, 0x5348])
    if mode == "iid":
        parts = np.array_split(rng.permutation(n), k)
    elif mode == "by_component":
        if components is None:
            raise ValueError("by_component sharding needs per-point component indices")
        home = np.asarray(components) % k
        scatter = rng.random(n) >= affinity
        owner = np.where(scatter, rng.integers(k, size=n), home)
        parts = [np.flatnonzero(owner == i) for i in range(k)]
        empty = [i for i, p in enumerate(parts) if len(p) == 0]
        if empty:
            raise ValueError(f"by_component split left shards {empty} empty")
    else:
        raise ValueError(f"unknown shard mode {mode!r}")
    return [
        Shard(i, dataset.take(idx),
              components=None if components is None else np.asarray(components)[idx])
        for i, idx in enumerate(parts)
    ]


def shard_probabilities(sizes, consumed) -> np.ndarray:
    """Sampling distribution that favours shards behind their size share.

    p_i is proportional to max(size_i / sum(size) - n_i / sum(n), 0).  When
    nothing has been consumed yet, or every shard is exactly on target, fall
    back to sampling proportional to size.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    consumed = np.asarray(consumed, dtype=np.float64)
    target = sizes / sizes.sum()
    total = consumed.sum()
    if total <= 0:
        return target
    w = np.maximum(target - consumed / total, 0.0)
    if w.sum() <= 0:
        return target
    return w / w.sum()


def sample_shard(shards: list[Shard], rng: np.random.Generator) -> int:
    if not shards:
        raise ValueError("no shards to sample from")
    p = shard_probabilities([s.size for s in shards], [s.consumed for s in shards])
    return shards[int(rng.choice(len(shards), p=p))].id


def next_batch(shard: Shard, batch_size: int, rng: np.random.Generator) -> Batch:
    """Sample rows with replacement and book them as consumed."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if shard.size == 0:
        raise ValueError(f"shard {shard.id} is empty")
    idx = rng.integers(shard.size, size=batch_size)
    shard.consumed += batch_size
    return shard.points.take(idx)


def dump_csv(shards: list[Shard], path) -> None:
    """Write all shard rows as x0..x{d-1},label,shard_id."""
    path = Path(path)
    dim = shards[0].points.inputs.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dim)] + ["label", "shard_id"])
        for s in shards:
            for x, y in zip(s.points.inputs, s.points.labels):
                w.writerow([repr(float(v)) for v in x] + [int(y), s.id])


def eval_spec(spec: MixtureSpec, num_points: int = 2048) -> MixtureSpec:
    """Same mixture, independent draw, for a held-out set."""
    return replace(spec, num_points=num_points, seed=spec.seed + 1_000_003)
