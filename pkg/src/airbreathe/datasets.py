"""Datasets, device partitioning, and file loaders.

The desk-scale default is a two-class isotropic Gaussian mixture whose
Bayes accuracy is controlled by the separation of the class means, so
logistic regression satisfies the strong-convexity and bounded-gradient
assumptions verifiably.  Partitioning supports i.i.d. splits and the
non-i.i.d. "shards" scheme where each device holds a few label-homogeneous
shards with distinct labels.

File formats: a feature/label table as ``.csv`` (label in the last column)
or ``.npz`` (arrays ``X`` and ``y``), plus the IDX image/label format for
the optional digit-classification preset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class DeviceShard:
    """One device's local dataset."""

    features: np.ndarray
    labels: np.ndarray
    device_id: int

    def __post_init__(self):
        if len(self.features) != len(self.labels) or len(self.labels) == 0:
            raise ConfigurationError("shard must be nonempty with matching lengths")

    def __len__(self) -> int:
        return len(self.labels)


def gaussian_mixture(num_samples: int, dim: int, separation: float,
                     rng: np.random.Generator, label_noise: float = 0.0):
    """Balanced two-class mixture N(±mu, I) with ||mu|| = separation.

    The mean direction is a random unit vector with support on every
    coordinate, so no model dimension is a priori useless.  ``label_noise``
    flips that fraction of labels, which keeps per-sample gradients (and
    hence the gradient-proportional interference) alive at the optimum.
    """
    if not 0.0 <= label_noise < 0.5:
        raise ConfigurationError("label_noise must lie in [0, 0.5)")
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    mu = separation * direction
    y = (np.arange(num_samples) % 2).astype(np.float64)
    rng.shuffle(y)
    X = rng.standard_normal((num_samples, dim)) + np.where(y[:, None] > 0.5, mu, -mu)
    if label_noise > 0.0:
        flip = rng.random(num_samples) < label_noise
        y = np.where(flip, 1.0 - y, y)
    return X, y


def quadratic_targets(num_samples: int, dim: int, center_scale: float,
                      spread: float, rng: np.random.Generator):
    """Target vectors t_j ~ N(center, spread²·I) for the quadratic probe.

    Labels are unused by the task and returned as zeros.
    """
    center = rng.normal(0.0, center_scale, dim)
    T = center + spread * rng.standard_normal((num_samples, dim))
    return T, np.zeros(num_samples)


def partition(X: np.ndarray, y: np.ndarray, num_devices: int, scheme,
              rng: np.random.Generator) -> list[DeviceShard]:
    """Split a dataset into per-device shards.

    ``scheme`` is ``"iid"`` or ``("shards", per_device)``; the latter gives
    every device ``per_device`` label-homogeneous shards with pairwise
    different labels.
    """
    n = len(y)
    if n < num_devices:
        raise ConfigurationError("dataset smaller than number of devices")
    if scheme == "iid":
        order = rng.permutation(n)
        return [DeviceShard(X[idx], y[idx], device_id=i)
                for i, idx in enumerate(np.array_split(order, num_devices))]
    if isinstance(scheme, (tuple, list)) and len(scheme) == 2 and scheme[0] == "shards":
        return _partition_shards(X, y, num_devices, int(scheme[1]), rng)
    raise ConfigurationError(f"unknown partition scheme {scheme!r}")


def _partition_shards(X, y, num_devices, per_device, rng):
    classes = np.unique(y)
    if per_device < 1:
        raise ConfigurationError("per_device must be >= 1")
    if len(classes) < per_device:
        raise ConfigurationError(
            f"{len(classes)} classes cannot give {per_device} distinct labels per device")
    num_shards = num_devices * per_device
    # label of shard j: rotate through classes so device i's shards
    # (i, i+1, ...) mod C carry distinct labels
    shard_labels = [classes[(i + j) % len(classes)]
                    for i in range(num_devices) for j in range(per_device)]
    pools = {c: list(rng.permutation(np.flatnonzero(y == c))) for c in classes}
    counts = {c: shard_labels.count(c) for c in classes}
    for c, k in counts.items():
        if k and len(pools[c]) < k:
            raise ConfigurationError(f"class {c!r} too small for {k} shards")
    shard_size = {c: len(pools[c]) // counts[c] for c in classes if counts[c]}
    shards_idx = []
    taken = {c: 0 for c in classes}
    for lbl in shard_labels:
        size = shard_size[lbl]
        start = taken[lbl]
        shards_idx.append(np.asarray(pools[lbl][start:start + size], dtype=np.intp))
        taken[lbl] += size
    out = []
    for i in range(num_devices):
        idx = np.concatenate(shards_idx[i * per_device:(i + 1) * per_device])
        out.append(DeviceShard(X[idx], y[idx], device_id=i))
    return out


# --------------------------------------------------------------------------
# File loaders
# --------------------------------------------------------------------------

def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    """Load a feature/label table from ``.csv`` or ``.npz``."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return np.asarray(data["X"], dtype=np.float64), \
                np.asarray(data["y"], dtype=np.float64)
    if path.suffix == ".csv":
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return table[:, :-1], table[:, -1]
    raise ConfigurationError(f"unsupported dataset format {path.suffix!r}")


def save_dataset(path, X: np.ndarray, y: np.ndarray) -> None:
    """Write a feature/label table in the format implied by the suffix."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, X=X, y=y)
        return
    if path.suffix == ".csv":
        header = ",".join([f"f{i}" for i in range(X.shape[1])] + ["label"])
        np.savetxt(path, np.column_stack([X, y]), delimiter=",",
                   header=header, comments="")
        return
    raise ConfigurationError(f"unsupported dataset format {path.suffix!r}")


def load_idx(path) -> np.ndarray:
    """Read one IDX-format tensor (the digit-dataset container format)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ConfigurationError(f"{path}: not an IDX file")
    dtype_code, ndim = raw[2], raw[3]
    dtypes = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4",
              0x0D: ">f4", 0x0E: ">f8"}
    if dtype_code not in dtypes:
        raise ConfigurationError(f"{path}: unknown IDX dtype 0x{dtype_code:02x}")
    dims = struct.unpack(f">{ndim}i", raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=dtypes[dtype_code], offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise ConfigurationError(f"{path}: size does not match header dims {dims}")
    return data.reshape(dims)


def load_idx_dataset(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Load an IDX image/label pair as (flattened floats in [0,1], labels)."""
    images = load_idx(images_path).astype(np.float64) / 255.0
    labels = load_idx(labels_path).astype(np.float64)
    if images.shape[0] != labels.shape[0]:
        raise ConfigurationError("image/label counts differ")
    return images.reshape(images.shape[0], -1), labels
