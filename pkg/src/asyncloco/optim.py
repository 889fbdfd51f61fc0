"""Inner (worker) and outer (server) optimizers plus the per-shard LR schedule.

All steps are pure: they take a state and arrays and return a new state and new
parameters without touching their inputs.  States are small dataclasses; each
outer state exposes ``step(params, g, lr)`` so the server can treat them
uniformly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class LrSchedule:
    lr_max: float
    lr_min: float
    warmup: int
    total: int

    def __post_init__(self):
        if not 0 < self.lr_min < self.lr_max:
            raise ValueError(f"need 0 < lr_min < lr_max, got {self.lr_min}, {self.lr_max}")
        if self.warmup < 0 or self.total < 1:
            raise ValueError("warmup must be >= 0 and total >= 1")

    def __call__(self, t: int) -> float:
        return lr_at(self, t)


def lr_at(spec: LrSchedule, t: int) -> float:
    """Linear warmup, then cosine decay to ``lr_min``; flat at ``lr_min`` past ``total``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t < spec.warmup:
        return t * spec.lr_max / spec.warmup
    span = max(spec.total - spec.warmup, 0)
    ratio = 1.0 if span == 0 else min(max((t - spec.warmup) / span, 0.0), 1.0)
    return spec.lr_min + 0.5 * (spec.lr_max - spec.lr_min) * (1.0 + math.cos(ratio * math.pi))


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


# ---------------------------------------------------------------- inner


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    _same_shape(params, grad)
    return params - lr * grad


@dataclass(frozen=True)
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamWState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adamw_step(state: AdamWState, params: np.ndarray, grad: np.ndarray,
               lr: float) -> tuple[AdamWState, np.ndarray]:
    """Adam with decoupled weight decay, scaled by the same lr."""
    _same_shape(params, grad)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new = params - lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * params)
    return replace(state, m=m, v=v, t=t), new


# ---------------------------------------------------------------- outer


@dataclass(frozen=True)
class OuterSGD:
    def step(self, params, g, lr):
        return self, sgd_step(params, g, lr)


@dataclass(frozen=True)
class MomentumState:
    m: np.ndarray
    beta: float = 0.9

    def step(self, params, g, lr):
        return outer_momentum(self, params, g, lr)


@dataclass(frozen=True)
class NesterovState:
    m: np.ndarray
    beta: float = 0.9

    def step(self, params, g, lr):
        return outer_nesterov(self, params, g, lr)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def step(self, params, g, lr):
        return outer_adam(self, params, g, lr)


@dataclass(frozen=True)
class DelayedNesterovState:
    m: np.ndarray
    delta: np.ndarray
    t: int = 0
    N: int = 4
    c: float = 0.0
    beta: float = 0.9

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("buffer size N must be >= 1")
        if not 0.0 <= self.c <= 1.0 / self.N + 1e-12:
            raise ValueError(f"c must lie in [0, 1/N] = [0, {1.0 / self.N}], got {self.c}")

    def step(self, params, g, lr):
        return delayed_nesterov(self, params, g, lr)


def outer_momentum(state: MomentumState, params, g, lr):
    _same_shape(params, g)
    m = state.beta * state.m + g
    return replace(state, m=m), params - lr * m


def outer_nesterov(state: NesterovState, params, g, lr):
    # identical to params - lr * (beta**2 * m_old + (1 + beta) * g)
    _same_shape(params, g)
    m = state.beta * state.m + g
    return replace(state, m=m), params - lr * (state.beta * m + g)


def outer_adam(state: AdamState, params, g, lr):
    _same_shape(params, g)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    return replace(state, m=m, v=v, t=t), params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def delayed_nesterov(state: DelayedNesterovState, params, g, lr):
    """Buffer pseudo-gradients; take plain steps of g/N and refresh momentum every N-th call."""
    _same_shape(params, g)
    N, c, beta = state.N, state.c, state.beta
    delta = state.delta + g
    if (state.t + 1) % N == 0:
        m = beta * state.m + delta / N
        new = params - lr * ((1 - c * N + c) * beta * m + g / N)
        delta = np.zeros_like(delta)
    else:
        m = state.m
        new = params - lr * (c * beta * m + g / N)
    return replace(state, m=m, delta=delta, t=state.t + 1), new


def make_outer(name: str, n: int, beta: float = 0.9, N: int = 4, c: float = 0.0):
    """Fresh outer optimizer state for ``n`` parameters."""
    if name == "sgd":
        return OuterSGD()
    if name == "momentum":
        return MomentumState(np.zeros(n), beta)
    if name == "nesterov":
        return NesterovState(np.zeros(n), beta)
    if name == "adam":
        return AdamState(np.zeros(n), np.zeros(n))
    if name == "delayed_nesterov":
        return DelayedNesterovState(np.zeros(n), np.zeros(n), 0, N, c, beta)
    raise ValueError(f"unknown outer optimizer {name!r}")


def sequential_nesterov_closed_form(m0, g, beta: float, k: int = 4):
    """Momentum and total step (in units of lr) after k Nesterov steps on the same g.

    Only the four-step expansion is provided.
    """
    if k != 4:
        raise NotImplementedError("closed form is only derived for k = 4")
    m0, g = np.asarray(m0, dtype=np.float64), np.asarray(g, dtype=np.float64)
    geo = 1 + beta + beta ** 2 + beta ** 3
    m4 = beta ** 4 * m0 + geo * g
    step = (4 + 4 * beta + 3 * beta ** 2 + 2 * beta ** 3 + beta ** 4) * g + beta ** 2 * geo * m0
    return m4, step
