"""Small feed-forward classifier with hand-written gradients.

Parameters live in a single flat float64 vector. For every layer the weight
matrix (fan_in x fan_out, row-major) is stored first, followed by its bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Raised when parameters, batches or configs disagree on dimensions."""


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 2
    hidden_dims: tuple[int, ...] = (32,)
    num_classes: int = 4
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.inputs) != len(self.labels):
            raise ConfigError(
                f"inputs has {len(self.inputs)} rows but labels has {len(self.labels)}"
            )

    def __len__(self):
        return len(self.labels)

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])


@dataclass
class ParamVector:
    """Flat parameter vector bound to the config that describes its layout."""

    values: np.ndarray
    config: MlpConfig = field(default_factory=MlpConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != self.config.num_params:
            raise ConfigError(
                f"expected {self.config.num_params} parameters, got {self.values.size}"
            )

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) into ``values`` for each layer."""
        out, pos = [], 0
        for fan_in, fan_out in self.config.layer_dims:
            w = self.values[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = self.values[pos:pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.config)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.config)


def init_params(config: MlpConfig, seed: int) -> ParamVector:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in config.layer_dims:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(chunks), config)


def _check(params: ParamVector, batch: Batch):
    cfg = params.config
    if batch.inputs.shape[1] != cfg.input_dim:
        raise ConfigError(
            f"batch has {batch.inputs.shape[1]} features, model expects {cfg.input_dim}"
        )
    if len(batch) == 0:
        raise ConfigError("empty batch")
    if batch.labels.min() < 0 or batch.labels.max() >= cfg.num_classes:
        raise ConfigError(f"labels must lie in [0, {cfg.num_classes})")


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0.0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _logits(params: ParamVector, x: np.ndarray):
    kind = params.config.activation
    layers = params.layers()
    cache = []
    a = x
    for w, b in layers[:-1]:
        z = a @ w + b
        cache.append((a, z))
        a = _act(z, kind)
    w, b = layers[-1]
    cache.append((a, None))
    return a @ w + b, cache


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _nll(logp, labels):
    picked = logp[np.arange(len(labels)), labels]
    # sequential left-to-right sum keeps the result independent of BLAS/pairwise choices
    total = 0.0
    for v in picked:
        total -= v
    return float(total / len(labels))


def forward_loss(params: ParamVector, batch: Batch) -> float:
    """Mean cross-entropy of the batch."""
    _check(params, batch)
    logits, _ = _logits(params, batch.inputs)
    return _nll(_log_softmax(logits), batch.labels)


def backward(params: ParamVector, batch: Batch) -> tuple[float, ParamVector]:
    _check(params, batch)
    kind = params.config.activation
    logits, cache = _logits(params, batch.inputs)
    logp = _log_softmax(logits)
    loss = _nll(logp, batch.labels)

    n = len(batch)
    delta = np.exp(logp)
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    layers = params.layers()
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        a_in, _ = cache[i]
        w, _ = layers[i]
        grads.append((a_in.T @ delta, delta.sum(axis=0)))
        if i > 0:
            _, z_prev = cache[i - 1]
            delta = (delta @ w.T) * _act_grad(z_prev, a_in, kind)
    flat = [part.reshape(-1) for gw, gb in reversed(grads) for part in (gw, gb)]
    return loss, params.with_values(np.concatenate(flat))


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate i."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def finite_diff_grad(params: ParamVector, batch: Batch, h: float = 1e-5) -> ParamVector:
    """Gradient oracle for :func:`backward` built only from :func:`forward_loss`."""
    probe = params.copy()

    def loss(values):
        probe.values = values
        return forward_loss(probe, batch)

    return params.with_values(central_difference(loss, params.values, h))


def eval_metrics(params: ParamVector, dataset: Batch) -> tuple[float, float, float]:
    """Return (loss, perplexity, accuracy); perplexity is exp(loss)."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check(params, dataset)
    logits, _ = _logits(params, dataset.inputs)
    loss = _nll(_log_softmax(logits), dataset.labels)
    acc = float(np.mean(logits.argmax(axis=1) == dataset.labels))
    return loss, math.exp(loss), acc
