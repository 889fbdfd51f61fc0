"""Pseudo-gradients and the staleness-aware transforms applied before the outer step."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class PseudoGradient:
    """delta = theta_base - theta_final for one finished job."""

    delta: np.ndarray
    worker_id: int = 0
    base_version: int = 0
    staleness: int = 0
    completed_time: float = 0.0
    local_steps: int = 0

    def scaled(self, factor: float) -> "PseudoGradient":
        return replace(self, delta=self.delta * factor)


def poly_discount(g: PseudoGradient, exponent: float = 0.5) -> PseudoGradient:
    """Scale by (1 + staleness) ** -exponent."""
    if exponent == 0:
        return g
    return g.scaled((1.0 + g.staleness) ** -exponent)


def staleness_filter(g: PseudoGradient, threshold: float = 10) -> PseudoGradient | None:
    """Drop updates older than ``threshold`` server versions (inclusive bound kept)."""
    if g.staleness > threshold:
        return None
    return g


NEVER_DISCARD = math.inf


def delay_compensate(g: PseudoGradient, theta_now: np.ndarray, theta_base: np.ndarray,
                     lam: float = 0.5) -> PseudoGradient:
    """First-order correction using the diagonal outer product as a Hessian proxy."""
    if np.shape(theta_now) != np.shape(theta_base) or np.shape(theta_now) != np.shape(g.delta):
        raise ValueError("delta, theta_now and theta_base must share a shape")
    d = g.delta
    return replace(g, delta=d + lam * d * d * (theta_now - theta_base))


@dataclass
class FifoBuffer:
    """Collects pseudo-gradients and releases their mean once ``capacity`` are held."""

    capacity: int
    items: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")

    def __len__(self):
        return len(self.items)

    def push(self, delta: np.ndarray) -> np.ndarray | None:
        self.items.append(np.asarray(delta, dtype=np.float64))
        if len(self.items) >= self.capacity:
            return self.flush()
        return None

    def flush(self) -> np.ndarray | None:
        if not self.items:
            return None
        total = self.items[0].copy()
        for d in self.items[1:]:
            total += d
        n = len(self.items)
        self.items = []
        return total / n
