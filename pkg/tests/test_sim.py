import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asyncloco.config import ExperimentConfig
from asyncloco.optim import NesterovState, OuterSGD, sequential_nesterov_closed_form
from asyncloco.sim import (Experiment, Job, SimClock, SyncStrategy, Worker, apply_sync,
                           assign_jobs, dylu_steps, get_completed_worker, plan_job, run_async,
                           run_sync)
from asyncloco.staleness import PseudoGradient


def small(**kw):
    base = dict(data__num_points=512, data__eval_points=128, sched__t_max=800)
    base.update(kw)
    return ExperimentConfig().with_values(**base)


@pytest.mark.parametrize("v,vmax,H,expected", [(3.0, 3.0, 50, 50), (1, 4, 50, 12), (2, 3, 50, 33),
                                               (0.001, 1, 50, 1)])
def test_dylu_examples(v, vmax, H, expected):
    assert dylu_steps(v, vmax, H) == expected


def test_dylu_preconditions():
    with pytest.raises(ValueError):
        dylu_steps(2, 1, 50)
    with pytest.raises(ValueError):
        dylu_steps(0, 1, 50)
    with pytest.raises(ValueError):
        dylu_steps(1, 1, 0)


@settings(max_examples=300)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=16), st.integers(1, 200))
def test_plan_spread_bound(speeds, H):
    vmax = max(speeds)
    done = [plan_job(v, vmax, H, True)[1] for v in speeds]
    assert max(done) - min(done) <= 1 / min(speeds) + 1e-12
    assert all(plan_job(v, vmax, H, True)[0] >= 1 for v in speeds)


def _jobs(speeds, dylu):
    exp = Experiment(small(sched__speeds=speeds, sched__workers=len(speeds), sched__dylu=dylu))
    workers = [Worker(i, v) for i, v in enumerate(speeds)]
    jobs = assign_jobs(exp, workers, exp.theta0, SimClock())
    return jobs, workers


def test_assign_jobs_dylu_example():
    jobs, workers = _jobs((4.0, 2.0, 1.0, 0.5), True)
    assert [j.steps for j in jobs] == [50, 25, 12, 6]
    assert [j.completed_time for j in jobs] == [12.5, 12.5, 12.0, 12.0]
    assert all(w.status == "training" and w.update is not None for w in workers)
    assert all(j.start_time == 0.0 and j.base_version == 0 for j in jobs)


def test_assign_jobs_fixed_steps():
    jobs, _ = _jobs((4.0, 2.0, 1.0, 0.5), False)
    assert [j.steps for j in jobs] == [50] * 4
    assert [j.completed_time for j in jobs] == [12.5, 25.0, 50.0, 100.0]


def test_assign_jobs_homogeneous_dylu():
    jobs, _ = _jobs((2.0,) * 4, True)
    assert [j.steps for j in jobs] == [50] * 4


def _training(t, wid=0):
    return Worker(wid, 1.0, "training",
                  Job(0, 1, 0, 0, 0.0, t, np.zeros(1)))


def test_get_completed_worker_examples():
    assert get_completed_worker([], 1.0, math.inf) is None
    assert get_completed_worker([Worker(0, 1.0, "completed")], 1.0, math.inf) is None
    w = _training(10.0)
    assert get_completed_worker([w], 0.0, math.inf) is w
    assert get_completed_worker([_training(10.0)], 2.0, 5.0) is None
    assert get_completed_worker([_training(10.0)], 5.0, 5.0) is not None


def test_get_completed_worker_tie_break():
    a, b = _training(3.0, 1), _training(3.0, 0)
    assert get_completed_worker([a, b], 0.0, math.inf) is b


def test_apply_sync_sgd_unit_lr():
    theta, delta = np.array([1.0, 2.0]), np.array([0.25, -0.5])
    clock = SimClock()
    out = apply_sync(SyncStrategy("vanilla", OuterSGD(), 1.0), theta, PseudoGradient(delta), clock)
    np.testing.assert_array_equal(out, theta - delta)
    assert clock.server_version == 1


def test_apply_sync_polythres_discard():
    theta = np.array([1.0, 2.0])
    strat = SyncStrategy("polythres", NesterovState(np.zeros(2)), 0.7, threshold=10)
    clock = SimClock(server_version=20)
    out = apply_sync(strat, theta, PseudoGradient(np.ones(2), staleness=11), clock)
    np.testing.assert_array_equal(out, theta)
    assert clock.server_version == 21 and strat.discarded == 1
    out = apply_sync(strat, theta, PseudoGradient(np.ones(2), staleness=10), clock)
    assert not np.array_equal(out, theta)


@pytest.mark.parametrize("beta", [0.1, 0.5, 0.9])
def test_simultaneous_nesterov_matches_closed_form(beta):
    rng = np.random.default_rng(1)
    theta0, delta = rng.normal(size=(2, 8))
    strat = SyncStrategy("vanilla", NesterovState(np.zeros(8), beta), 0.3)
    clock, theta = SimClock(), theta0
    for s in range(4):
        theta = apply_sync(strat, theta, PseudoGradient(delta, staleness=s), clock)
    _, step = sequential_nesterov_closed_form(np.zeros(8), delta, beta)
    np.testing.assert_allclose(theta0 - theta, 0.3 * step, atol=1e-12)


def test_single_worker_is_serial():
    cfg = small(sched__workers=1, sched__speeds=(1.0,), sched__t_max=500, eval__every=1)
    log = run_async(cfg)
    assert [s for _, s, _ in log.synced] == [0] * 10
    assert [r.local_updates for r in log.rows] == [50 * v for v in range(11)]


def test_homogeneous_cohorts_restart_together():
    log = run_async(small(sched__profile="no"))
    rounds = defaultdict(list)
    for j in log.jobs:
        rounds[j.start_time].append(j)
    assert all(len(js) == 4 for js in rounds.values())
    assert all(len({j.base_version for j in js}) == 1 for js in rounds.values())
    assert {s for _, s, _ in log.synced} == {0, 1, 2, 3}


def test_fast_worker_job_count():
    cfg = small(sched__workers=2, sched__speeds=(4.0, 0.5), sched__t_max=450)
    log = run_async(cfg)
    slow_done = min(j.completed_time for j in log.jobs if j.worker_id == 1)
    fast = [j for j in log.jobs if j.worker_id == 0 and j.completed_time <= slow_done]
    assert slow_done == 100.0
    assert len(fast) == 8 == math.ceil(4.0 / 0.5)


def test_run_sync_single_worker_sgd_is_plain_training():
    cfg = small(sched__mode="sync", sched__workers=1, sched__speeds=(1.0,),
                outer__optimizer="sgd", outer__lr=1.0, sched__t_max=300)
    log = run_sync(cfg, record_params=True)
    exp = Experiment(cfg)
    plain = exp.local_train(0, 300, exp.theta0.copy())
    np.testing.assert_allclose(log.final_params, plain, rtol=0, atol=1e-12)
    assert len(log.trajectory) == 6


def test_run_sync_round_time():
    log = run_sync(small(sched__mode="sync", eval__every=1))
    times = [r.sim_time_s for r in log.rows]
    np.testing.assert_allclose(np.diff(times), 50 / 0.125)
    assert log.final.local_updates == 800


@pytest.mark.parametrize("kw", [dict(), dict(sched__dylu=True, outer__strategy="delayed_nesterov"),
                                dict(outer__strategy="polythres", outer__threshold=1)])
def test_async_invariants(kw):
    cfg = small(eval__every=1, **kw)
    log = run_async(cfg)
    again = run_async(cfg)
    assert log.rows == again.rows
    np.testing.assert_array_equal(log.final_params, again.final_params)

    t_local = log.clock.total_local_updates
    assert t_local >= cfg.sched.t_max >= t_local - cfg.sched.H
    times = [r.sim_time_s for r in log.rows]
    assert times == sorted(times)
    versions = [r.server_update for r in log.rows]
    assert versions == sorted(set(versions)) and versions[-1] == log.clock.server_version
    for j in log.jobs:
        assert j.steps >= 1
        assert j.completed_time == j.start_time + j.steps / cfg.speeds[j.worker_id]
    # each shard's LR position continues from that shard's own step count
    pos = defaultdict(int)
    for j in log.jobs:
        assert j.lr_start == pos[j.shard_id]
        pos[j.shard_id] += j.steps


def test_polythres_discards_still_count_work():
    log = run_async(small(outer__strategy="polythres", outer__threshold=0))
    assert log.discarded > 0
    assert log.clock.server_version == len(log.synced)
    assert log.clock.total_local_updates == 50 * len(log.synced)


def test_max_sim_time_stops_run():
    cfg = small(sched__t_max=10**9, sched__max_sim_time=300.0)
    log = run_async(cfg)
    assert log.clock.now <= 300.0
    assert all(r.sim_time_s <= 300.0 for r in log.rows)
    sync = run_sync(cfg.with_values(sched__mode="sync"))
    assert sync.clock.now <= 300.0


def test_t_max_zero_single_row():
    for mode in ("async", "sync"):
        log = run_async(small(sched__t_max=0)) if mode == "async" else \
            run_sync(small(sched__t_max=0, sched__mode="sync"))
        assert len(log.rows) == 1 and log.rows[0].server_update == 0
