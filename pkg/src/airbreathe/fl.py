"""Federated learning substrate: local gradients, aggregation, global update.

One canonical global model is updated per round (the perfect downlink makes
server-side and device-side updates equivalent).  Mini-batch draws use a
per-device, per-round stream so device computations are independent and a
trajectory is a pure function of (config, master seed).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datasets import DeviceShard
from .errors import ConfigurationError


@dataclass(frozen=True)
class ModelState:
    """Global model weights at a round boundary."""

    w: np.ndarray
    round: int
    prunable: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.w)):
            raise ConfigurationError("model weights must be finite")
        if self.round < 0:
            raise ConfigurationError("round must be >= 0")


def init_state(task, rng: np.random.Generator) -> ModelState:
    return ModelState(w=task.init_weights(rng), round=0, prunable=task.prunable)


def local_gradient(state: ModelState, shard: DeviceShard, task,
                   batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Mini-batch gradient of the local empirical loss at the current model."""
    n = len(shard)
    if batch_size > n:
        raise ConfigurationError(f"batch size {batch_size} exceeds shard size {n}")
    if batch_size == n:
        idx = slice(None)
    else:
        idx = rng.choice(n, size=batch_size, replace=False)
    return task.gradient(state.w, shard.features[idx], shard.labels[idx])


def full_gradient(state: ModelState, shard: DeviceShard, task) -> np.ndarray:
    """Deterministic full-shard gradient (oracle for unbiasedness checks)."""
    return task.gradient(state.w, shard.features, shard.labels)


def ideal_aggregate(gradients) -> np.ndarray:
    """Coordinatewise mean of the device gradients."""
    if len(gradients) == 0:
        raise ConfigurationError("cannot aggregate an empty gradient list")
    dims = {np.asarray(g).shape for g in gradients}
    if len(dims) != 1:
        raise ConfigurationError(f"gradient dims differ: {sorted(dims)}")
    return np.mean(np.asarray(gradients, dtype=np.float64), axis=0)


def apply_update(state: ModelState, update: np.ndarray, eta: float) -> ModelState:
    """Gradient step w' = w - eta * update; advances the round counter."""
    update = np.asarray(update, dtype=np.float64)
    if update.shape != state.w.shape:
        raise ConfigurationError("update dimension does not match model")
    return replace(state, w=state.w - eta * update, round=state.round + 1)


def evaluate(state: ModelState, X_val: np.ndarray, y_val: np.ndarray, task):
    """(loss, accuracy) on a held-out set; deterministic given inputs."""
    return task.evaluate(state.w, X_val, y_val)
