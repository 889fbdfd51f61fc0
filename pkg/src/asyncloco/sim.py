"""Deterministic discrete-event simulation of asynchronous and synchronous Local-SGD.

Simulated time advances only through job completion events; each job's
duration is ``steps / speed``.  Local training for a job is computed eagerly
when the job is handed out, and its pseudo-gradient becomes visible to the
server at the job's completion time.  Ties in completion time are broken by
ascending worker id.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import data as datagen
from .config import ExperimentConfig
from .model import ParamVector, backward, eval_metrics, init_params
from .optim import AdamWState, LrSchedule, adamw_step, make_outer, sgd_step
from .staleness import (FifoBuffer, PseudoGradient, delay_compensate, poly_discount,
                        staleness_filter)


def dylu_steps(speed: float, max_speed: float, H: int) -> int:
    """Local steps so that a worker of ``speed`` finishes about when the fastest runs H."""
    if not 0 < speed <= max_speed:
        raise ValueError(f"need 0 < speed <= max_speed, got {speed}, {max_speed}")
    if H < 1:
        raise ValueError("H must be >= 1")
    return max(1, math.floor(speed / max_speed * H))


def plan_job(speed: float, max_speed: float, H: int, dylu: bool,
             start: float = 0.0) -> tuple[int, float]:
    """(steps, completed_time) for a job started at ``start`` on a worker of ``speed``."""
    steps = dylu_steps(speed, max_speed, H) if dylu else H
    return steps, start + steps / speed


@dataclass
class Job:
    shard_id: int
    steps: int
    lr_start: int
    base_version: int
    start_time: float
    completed_time: float
    theta_base: np.ndarray = field(repr=False)
    worker_id: int = 0


@dataclass
class Worker:
    id: int
    speed: float
    status: str = "idle"  # idle | training | completed
    job: Job | None = None
    update: PseudoGradient | None = None


@dataclass
class SimClock:
    now: float = 0.0
    server_version: int = 0
    total_local_updates: int = 0

    def advance(self, t: float):
        if t < self.now:
            raise RuntimeError(f"clock moved backwards: {t} < {self.now}")
        self.now = t


@dataclass(frozen=True)
class MetricsRow:
    server_update: int
    local_updates: int
    sim_time_s: float
    eval_loss: float
    eval_ppl: float
    eval_acc: float
    strategy: str = ""


@dataclass
class MetricsLog:
    strategy: str
    rows: list[MetricsRow] = field(default_factory=list)
    final_params: np.ndarray | None = None
    trajectory: list[tuple[int, np.ndarray]] = field(default_factory=list)
    jobs: list[Job] = field(default_factory=list)
    synced: list[tuple[int, int, int]] = field(default_factory=list)  # (worker, staleness, version)
    clock: SimClock | None = None
    discarded: int = 0

    @property
    def final(self) -> MetricsRow:
        return self.rows[-1]

    def loss_at_time(self, t: float) -> float:
        """eval_loss of the last row logged at or before simulated time ``t``."""
        eligible = [r for r in self.rows if r.sim_time_s <= t]
        return eligible[-1].eval_loss


# ---------------------------------------------------------------- server side


class SyncStrategy:
    """Transform chain plus outer optimizer used by the server for each update."""

    def __init__(self, name: str, outer_state, lr: float, *, poly_exponent: float = 0.5,
                 threshold: float = 10, lam: float = 0.5, buffer_size: int = 4):
        self.name = name
        self.state = outer_state
        self.lr = lr
        self.poly_exponent = poly_exponent
        self.threshold = threshold
        self.lam = lam
        self.buffer = FifoBuffer(buffer_size) if name == "async_buffer" else None
        self.discarded = 0

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, n: int) -> "SyncStrategy":
        o = cfg.outer
        opt = "delayed_nesterov" if o.strategy == "delayed_nesterov" else o.optimizer
        state = make_outer(opt, n, beta=o.beta, N=cfg.buffer_size, c=o.c)
        return cls(o.strategy, state, o.lr, poly_exponent=o.poly_exponent,
                   threshold=o.threshold, lam=o.lam, buffer_size=cfg.buffer_size)

    def apply(self, theta: np.ndarray, g: PseudoGradient,
              theta_base: np.ndarray | None = None) -> np.ndarray:
        name = self.name
        if name in ("poly", "polythres"):
            if name == "polythres" and staleness_filter(g, self.threshold) is None:
                self.discarded += 1
                return theta
            g = poly_discount(g, self.poly_exponent)
        elif name == "delay_comp":
            g = delay_compensate(g, theta, theta_base, self.lam)
        elif name == "async_buffer":
            mean = self.buffer.push(g.delta)
            if mean is None:
                return theta
            self.state, theta = self.state.step(theta, mean, self.lr)
            return theta
        self.state, theta = self.state.step(theta, g.delta, self.lr)
        return theta


def apply_sync(strategy: SyncStrategy, theta: np.ndarray, g: PseudoGradient,
               clock: SimClock, theta_base: np.ndarray | None = None) -> np.ndarray:
    """Apply one pseudo-gradient and bump the server version (also for discarded ones)."""
    theta = strategy.apply(theta, g, theta_base)
    clock.server_version += 1
    return theta


def get_completed_worker(workers: list[Worker], grace: float,
                         tau_sync: float) -> Worker | None:
    """Earliest still-unprocessed job, if it lands inside the current grace window."""
    pending = [w for w in workers if w.status == "training"]
    if not pending:
        return None
    w = min(pending, key=lambda w: (w.job.completed_time, w.id))
    if w.job.completed_time - tau_sync <= grace:
        return w
    return None


# ---------------------------------------------------------------- experiment


class Experiment:
    """All mutable state of one run: data, shards, inner states, RNG streams."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        d = cfg.data
        spec = datagen.make_mixture_spec(d.num_classes, d.components_per_class, d.dim,
                                         d.covariance_scale, d.num_points, cfg.seed.data,
                                         d.spread)
        train, comps = datagen.sample_mixture(spec)
        self.eval_set = datagen.generate_dataset(datagen.eval_spec(spec, d.eval_points))
        self.shards = datagen.split_shards(train, cfg.sched.workers, d.shard_mode,
                                           cfg.seed.data, comps, d.affinity)
        self.mlp = cfg.mlp
        self.theta0 = init_params(self.mlp, cfg.seed.init).values
        self.schedule = LrSchedule(cfg.inner.lr, cfg.inner.lr_min, cfg.inner.warmup,
                                   cfg.shard_total_steps)
        run = cfg.seed.run
        self.batch_rngs = [np.random.default_rng([run, s.id, 1]) for s in self.shards]
        self.sched_rng = np.random.default_rng([run, 2])
        self.shard_steps = [0] * len(self.shards)
        i = cfg.inner
        self.inner_states = [
            AdamWState.zeros(self.mlp.num_params, beta1=i.beta1, beta2=i.beta2, eps=i.eps,
                             weight_decay=i.weight_decay) if i.optimizer == "adamw" else None
            for _ in self.shards
        ]

    def local_train(self, shard_id: int, steps: int, theta: np.ndarray) -> np.ndarray:
        """Run ``steps`` inner steps on a shard; LR and optimizer state belong to the shard."""
        shard = self.shards[shard_id]
        rng = self.batch_rngs[shard_id]
        bs = self.cfg.data.batch_size
        state = self.inner_states[shard_id]
        for _ in range(steps):
            lr = self.schedule(self.shard_steps[shard_id])
            batch = datagen.next_batch(shard, bs, rng)
            _, grad = backward(ParamVector(theta, self.mlp), batch)
            if state is None:
                theta = sgd_step(theta, grad.values, lr)
            else:
                state, theta = adamw_step(state, theta, grad.values, lr)
            self.shard_steps[shard_id] += 1
        self.inner_states[shard_id] = state
        return theta

    def evaluate(self, theta: np.ndarray) -> tuple[float, float, float]:
        return eval_metrics(ParamVector(theta, self.mlp), self.eval_set)

    def assign_jobs(self, workers: list[Worker], theta: np.ndarray, clock: SimClock,
                    max_speed: float) -> list[Job]:
        """Hand each worker a shard (progress-balanced), a step budget and a fresh job."""
        jobs = []
        for w in workers:
            sid = datagen.sample_shard(self.shards, self.sched_rng)
            steps, done = plan_job(w.speed, max_speed, self.cfg.sched.H, self.cfg.sched.dylu,
                                   clock.now)
            job = Job(sid, steps, self.shard_steps[sid], clock.server_version, clock.now,
                      done, theta, w.id)
            final = self.local_train(sid, steps, theta)
            w.job = job
            w.update = PseudoGradient(theta - final, w.id, clock.server_version,
                                      completed_time=job.completed_time, local_steps=steps)
            w.status = "training"
            jobs.append(job)
        return jobs


def _row(exp: Experiment, theta, clock: SimClock, tag: str) -> MetricsRow:
    loss, ppl, acc = exp.evaluate(theta)
    return MetricsRow(clock.server_version, clock.total_local_updates, clock.now,
                      loss, ppl, acc, tag)


def assign_jobs(exp: Experiment, workers: list[Worker], theta: np.ndarray,
                clock: SimClock) -> list[Job]:
    return exp.assign_jobs(workers, theta, clock, max(exp.cfg.speeds))


def run_async(cfg: ExperimentConfig, record_params: bool = False,
              experiment: Experiment | None = None) -> MetricsLog:
    """Event loop: sync completed workers inside a grace window, then reassign them together."""
    exp = experiment or Experiment(cfg)
    tag = cfg.tag
    log = MetricsLog(tag)
    clock = SimClock()
    strategy = SyncStrategy.from_config(cfg, exp.mlp.num_params)
    every = cfg.eval.every
    t_max, max_time, grace = cfg.sched.t_max, cfg.sched.max_sim_time, cfg.grace_period

    theta = exp.theta0.copy()
    workers = [Worker(i, v) for i, v in enumerate(cfg.speeds)]
    max_speed = max(cfg.speeds)
    completed: list[Worker] = []
    log.rows.append(_row(exp, theta, clock, tag))
    log.jobs += exp.assign_jobs(workers, theta, clock, max_speed)
    tau_sync = math.inf

    while clock.total_local_updates < t_max:
        w = get_completed_worker(workers, grace, tau_sync)
        if w is not None:
            if w.job.completed_time > max_time:
                break
            tau_sync = min(tau_sync, w.job.completed_time)
            clock.advance(w.job.completed_time)
            g = w.update
            staleness = clock.server_version - g.base_version
            g = PseudoGradient(g.delta, g.worker_id, g.base_version, staleness,
                               g.completed_time, g.local_steps)
            log.synced.append((w.id, staleness, clock.server_version))
            theta = apply_sync(strategy, theta, g, clock, w.job.theta_base)
            w.status = "completed"
            completed.append(w)
            clock.total_local_updates += w.job.steps
            if record_params:
                log.trajectory.append((clock.server_version, theta.copy()))
            if clock.server_version % every == 0:
                log.rows.append(_row(exp, theta, clock, tag))
        else:
            tau_sync = math.inf
            log.jobs += exp.assign_jobs(completed, theta, clock, max_speed)
            completed = []

    if log.rows[-1].server_update != clock.server_version:
        log.rows.append(_row(exp, theta, clock, tag))
    log.final_params = theta
    log.clock = clock
    log.discarded = strategy.discarded
    return log


def run_sync(cfg: ExperimentConfig, record_params: bool = False,
             experiment: Experiment | None = None) -> MetricsLog:
    """Synchronous rounds: every worker runs H steps on its own shard from the same model.

    The round takes as long as the slowest worker needs, ``H / min(speeds)``.
    """
    exp = experiment or Experiment(cfg)
    tag = cfg.tag
    log = MetricsLog(tag)
    clock = SimClock()
    k, H = cfg.sched.workers, cfg.sched.H
    state = make_outer(cfg.outer.optimizer, exp.mlp.num_params, beta=cfg.outer.beta)
    lr = cfg.outer.lr
    round_time = H / min(cfg.speeds)
    every = cfg.eval.every

    theta = exp.theta0.copy()
    log.rows.append(_row(exp, theta, clock, tag))
    while clock.total_local_updates < cfg.sched.t_max:
        if clock.now + round_time > cfg.sched.max_sim_time:
            break
        total = None
        for i in range(k):
            delta = theta - exp.local_train(i, H, theta)
            total = delta if total is None else total + delta
        state, theta = state.step(theta, total / k, lr)
        clock.server_version += 1
        clock.total_local_updates += k * H
        clock.advance(clock.now + round_time)
        if record_params:
            log.trajectory.append((clock.server_version, theta.copy()))
        if clock.server_version % every == 0:
            log.rows.append(_row(exp, theta, clock, tag))

    if log.rows[-1].server_update != clock.server_version:
        log.rows.append(_row(exp, theta, clock, tag))
    log.final_params = theta
    log.clock = clock
    return log


def run_experiment(cfg: ExperimentConfig, record_params: bool = False) -> MetricsLog:
    if cfg.sched.mode == "sync":
        return run_sync(cfg, record_params)
    return run_async(cfg, record_params)
