import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from asyncloco.optim import (AdamState, AdamWState, DelayedNesterovState, LrSchedule,
                             MomentumState, NesterovState, OuterSGD, adamw_step,
                             delayed_nesterov, lr_at, make_outer, outer_adam, outer_momentum,
                             outer_nesterov, sequential_nesterov_closed_form, sgd_step)

finite = st.floats(-100, 100, allow_nan=False)
vec = arrays(np.float64, 5, elements=finite)


class TestSchedule:
    sched = LrSchedule(lr_max=1.0, lr_min=0.01, warmup=100, total=1000)

    def test_warmup(self):
        assert lr_at(self.sched, 0) == 0.0
        assert lr_at(self.sched, 50) == pytest.approx(0.5)
        assert lr_at(self.sched, 100) == 1.0

    def test_cosine_endpoints_and_clamp(self):
        assert lr_at(self.sched, 1000) == pytest.approx(0.01, abs=1e-15)
        assert lr_at(self.sched, 2000) == pytest.approx(0.01, abs=1e-15)
        assert lr_at(self.sched, 550) == pytest.approx(0.505)

    def test_degenerate_horizon(self):
        sched = LrSchedule(1.0, 0.1, warmup=10, total=5)
        assert lr_at(sched, 10) == pytest.approx(0.1)
        assert lr_at(LrSchedule(1.0, 0.1, 0, 10), 0) == 1.0

    @settings(max_examples=200)
    @given(st.integers(0, 5000))
    def test_bounds(self, t):
        assert 0.0 <= self.sched(t) <= 1.0
        if t >= 100:
            assert self.sched(t) >= 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            LrSchedule(1.0, 0.0, 10, 100)
        with pytest.raises(ValueError):
            lr_at(self.sched, -1)


def test_sgd_examples():
    p = np.array([1.0, -2.0])
    np.testing.assert_array_equal(sgd_step(p, np.array([5.0, 5.0]), 0.0), p)
    assert sgd_step(np.array([1.0]), np.array([2.0]), 0.1)[0] == pytest.approx(0.8)
    g = np.array([0.3, -1.1])
    np.testing.assert_allclose(sgd_step(sgd_step(p, g, 0.1), g, 0.1), sgd_step(p, g, 0.2), rtol=1e-15)
    with pytest.raises(ValueError):
        sgd_step(p, np.zeros(3), 0.1)


class TestAdamW:
    def test_first_step_bias_correction(self):
        s = AdamWState.zeros(1, weight_decay=0.0)
        s, p = adamw_step(s, np.array([0.0]), np.array([1.0]), 0.01)
        assert p[0] == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)
        assert s.t == 1

    def test_zero_gradient_no_decay(self):
        s = AdamWState.zeros(3, weight_decay=0.0)
        p = np.array([1.0, 2.0, 3.0])
        _, q = adamw_step(s, p, np.zeros(3), 0.1)
        np.testing.assert_array_equal(q, p)

    def test_pure_decay(self):
        s = AdamWState.zeros(1, weight_decay=0.1)
        _, q = adamw_step(s, np.array([1.0]), np.zeros(1), 0.1)
        assert q[0] == pytest.approx(0.99, abs=1e-15)

    @settings(max_examples=50)
    @given(vec, vec)
    def test_state_invariants_and_purity(self, p, g):
        s = AdamWState.zeros(5)
        p0, g0 = p.copy(), g.copy()
        s1, _ = adamw_step(s, p, g, 0.01)
        s2, _ = adamw_step(s1, p, g, 0.01)
        assert s2.t == 2 and np.all(s2.v >= 0)
        np.testing.assert_array_equal(p, p0)
        np.testing.assert_array_equal(g, g0)
        assert s.t == 0 and not s.m.any()


class TestNesterov:
    def test_example(self):
        s, p = outer_nesterov(NesterovState(np.zeros(1), 0.9), np.zeros(1), np.ones(1), 0.1)
        assert s.m[0] == 1.0
        assert p[0] == pytest.approx(-0.19, abs=1e-15)

    def test_beta_zero_is_sgd(self):
        g = np.array([0.5, -2.0])
        _, p = outer_nesterov(NesterovState(np.zeros(2), 0.0), np.ones(2), g, 0.3)
        np.testing.assert_array_equal(p, sgd_step(np.ones(2), g, 0.3))

    def test_zero_gradient_zero_momentum(self):
        _, p = outer_nesterov(NesterovState(np.zeros(2)), np.ones(2), np.zeros(2), 0.3)
        np.testing.assert_array_equal(p, np.ones(2))

    @settings(max_examples=200)
    @given(vec, vec, vec, st.floats(0, 0.99), st.floats(0.001, 2))
    def test_matches_pre_update_form(self, m, p, g, beta, lr):
        _, new = outer_nesterov(NesterovState(m, beta), p, g, lr)
        ref = p - lr * (beta ** 2 * m + (1 + beta) * g)
        np.testing.assert_allclose(new, ref, rtol=1e-9, atol=1e-9)


class TestMomentum:
    def test_example(self):
        _, p = outer_momentum(MomentumState(np.zeros(1), 0.9), np.zeros(1), np.ones(1), 0.1)
        assert p[0] == pytest.approx(-0.1)

    def test_beta_zero(self):
        g = np.array([1.5])
        _, p = outer_momentum(MomentumState(np.zeros(1), 0.0), np.ones(1), g, 0.2)
        np.testing.assert_array_equal(p, sgd_step(np.ones(1), g, 0.2))

    def test_geometric_limit(self):
        s, p = MomentumState(np.zeros(1), 0.9), np.zeros(1)
        for _ in range(200):
            prev = p
            s, p = outer_momentum(s, p, np.ones(1), 0.1)
        assert abs(prev[0] - p[0]) == pytest.approx(0.1 / (1 - 0.9), abs=1e-6)


class TestAdam:
    def test_first_step(self):
        g = np.array([1.0, -3.0, 0.2])
        _, p = outer_adam(AdamState(np.zeros(3), np.zeros(3)), np.zeros(3), g, 0.7)
        np.testing.assert_allclose(np.abs(p), 0.7, rtol=1e-7)
        np.testing.assert_array_equal(np.sign(p), -np.sign(g))

    def test_zero_gradient(self):
        _, p = outer_adam(AdamState(np.zeros(2), np.zeros(2)), np.ones(2), np.zeros(2), 0.7)
        np.testing.assert_array_equal(p, np.ones(2))


class TestDelayedNesterov:
    def test_rejects_bad_c(self):
        with pytest.raises(ValueError):
            DelayedNesterovState(np.zeros(1), np.zeros(1), N=4, c=0.5)
        with pytest.raises(ValueError):
            DelayedNesterovState(np.zeros(1), np.zeros(1), N=0)

    @pytest.mark.parametrize("c", [0.0, 0.1, 1.0])
    def test_n1_is_nesterov(self, c):
        rng = np.random.default_rng(7)
        dn = DelayedNesterovState(np.zeros(4), np.zeros(4), N=1, c=c, beta=0.9)
        ns = NesterovState(np.zeros(4), 0.9)
        a = b = rng.normal(size=4)
        for g in rng.normal(size=(100, 4)):
            dn, a = delayed_nesterov(dn, a, g, 0.3)
            ns, b = outer_nesterov(ns, b, g, 0.3)
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_two_step_example(self):
        s = DelayedNesterovState(np.zeros(1), np.zeros(1), N=2, c=0.0, beta=0.9)
        s, p1 = delayed_nesterov(s, np.zeros(1), np.ones(1), 1.0)
        assert p1[0] == pytest.approx(-0.5)
        s, p2 = delayed_nesterov(s, p1, np.ones(1), 1.0)
        assert p2[0] == pytest.approx(-1.9)
        assert s.t == 2 and not s.delta.any() and s.m[0] == 1.0

    def test_between_flushes_is_sgd(self):
        s = DelayedNesterovState(np.array([5.0]), np.zeros(1), t=0, N=4, c=0.0, beta=0.9)
        p = np.array([1.0])
        for _ in range(3):
            old_m = s.m
            s, q = delayed_nesterov(s, p, np.array([2.0]), 0.4)
            assert q[0] == pytest.approx(p[0] - 0.4 / 4 * 2.0)
            assert s.m is old_m
            p = q

    @settings(max_examples=100)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.floats(0.0, 0.99))
    def test_window_equals_one_aggregated_nesterov_step(self, N, seed, beta):
        rng = np.random.default_rng(seed)
        m0 = rng.normal(size=3)
        s = DelayedNesterovState(m0, np.zeros(3), 0, N, 0.0, beta)
        p0 = p = rng.normal(size=3)
        gs = rng.normal(size=(N, 3))
        for g in gs:
            s, p = delayed_nesterov(s, p, g, 0.5)
        _, ref = outer_nesterov(NesterovState(m0, beta), p0, gs.mean(axis=0), 0.5)
        np.testing.assert_allclose(p, ref, atol=1e-12)
        np.testing.assert_allclose(s.m, beta * m0 + gs.mean(axis=0), atol=1e-12)


def test_closed_form_examples():
    m4, step = sequential_nesterov_closed_form(0.0, 1.0, 0.5)
    assert m4 == 1.875
    assert step == 7.0625
    m4, step = sequential_nesterov_closed_form(np.array([0.3]), np.array([2.0]), 0.0)
    assert m4[0] == 2.0 and step[0] == 8.0
    with pytest.raises(NotImplementedError):
        sequential_nesterov_closed_form(0.0, 1.0, 0.5, k=3)


@pytest.mark.parametrize("beta", [0.1, 0.5, 0.9])
def test_closed_form_matches_iteration(beta):
    rng = np.random.default_rng(0)
    m0, g, p0 = rng.normal(size=(3, 6))
    s, p = NesterovState(m0, beta), p0
    for _ in range(4):
        s, p = outer_nesterov(s, p, g, 1.0)
    m4, step = sequential_nesterov_closed_form(m0, g, beta)
    np.testing.assert_allclose(s.m, m4, atol=1e-12)
    np.testing.assert_allclose(p0 - p, step, atol=1e-12)


def test_make_outer():
    assert isinstance(make_outer("sgd", 3), OuterSGD)
    assert isinstance(make_outer("delayed_nesterov", 3, N=2, c=0.5), DelayedNesterovState)
    with pytest.raises(ValueError):
        make_outer("lamb", 3)


@settings(max_examples=50)
@given(vec, vec)
def test_outer_steps_deterministic(p, g):
    for name in ("sgd", "momentum", "nesterov", "adam", "delayed_nesterov"):
        s = make_outer(name, 5, N=2)
        a = s.step(p, g, 0.3)
        b = s.step(p, g, 0.3)
        np.testing.assert_array_equal(a[1], b[1])
        assert np.all(np.isfinite(a[1]))
