"""Learning tasks: loss, analytic gradient, prediction, parameter layout.

Every task exposes the same small surface over a flat parameter vector
``w`` of dimension ``dim``:

* ``loss(w, X, y)`` -- mean empirical loss plus the L2 term,
* ``gradient(w, X, y)`` -- exact analytic gradient of ``loss``,
* ``evaluate(w, X, y)`` -- (loss, accuracy) on a held-out set,
* ``init_weights(rng)`` -- initial parameters,
* ``prunable`` -- boolean flags marking coordinates eligible for pruning
  (weights yes, biases no, matching common practice).

``logistic_l2`` is the default desk-scale task: with ``l2 > 0`` its loss is
strongly convex, so the convergence diagnostics apply verbatim.
``quadratic`` is the analysis probe with exactly known curvature.
``mlp_small`` is a one-hidden-layer tanh network.  ``cnn_mnist`` is the
long-running 21,840-parameter convolutional preset; it is provided for
completeness and is not exercised by the fast test suite at full scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError

TASK_KINDS = ("logistic_l2", "mlp_small", "quadratic", "cnn_mnist")


@dataclass(frozen=True)
class TaskSpec:
    """Declarative task description used by experiment configs."""

    kind: str
    dim: int
    l2: float = 0.0
    batch_size: int = 32
    learning_rate: float = 0.1
    hidden: int = 8          # mlp_small only
    in_features: int = 0     # mlp_small only; 0 means "derive from dim"
    curvature: float = 1.0   # quadratic only
    num_classes: int = 2

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}")
        if self.dim < 1 or self.batch_size < 1:
            raise ConfigurationError("dim and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be > 0")
        if self.kind == "logistic_l2" and self.l2 <= 0:
            raise ConfigurationError("logistic_l2 requires l2 > 0 (strong convexity)")


def mlp_dim(in_features: int, hidden: int) -> int:
    """Parameter count of the one-hidden-layer binary MLP."""
    return in_features * hidden + hidden + hidden + 1


class LogisticL2:
    """Binary logistic regression with L2 regularization.

    The loss is l2-strongly convex; all ``dim`` coordinates are prunable.
    """

    def __init__(self, dim: int, l2: float):
        self.dim = dim
        self.l2 = l2
        self.prunable = np.ones(dim, dtype=bool)

    def init_weights(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        z = X @ w
        ce = np.mean(np.logaddexp(0.0, z) - y * z)
        return float(ce + 0.5 * self.l2 * (w @ w))

    def gradient(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        z = X @ w
        return X.T @ (expit(z) - y) / X.shape[0] + self.l2 * w

    def evaluate(self, w: np.ndarray, X: np.ndarray, y: np.ndarray):
        pred = (X @ w) > 0
        return self.loss(w, X, y), float(np.mean(pred == (y > 0.5)))


class Quadratic:
    """Strongly convex probe: f_j(w) = (c/2)·||w - t_j||².

    Samples are target vectors; the full-data optimum is their mean and the
    mini-batch gradient is c·(w - mean of batch targets), so every constant
    of the convergence analysis is known exactly.
    """

    def __init__(self, dim: int, curvature: float):
        if curvature <= 0:
            raise ConfigurationError("curvature must be > 0")
        self.dim = dim
        self.curvature = curvature
        self.prunable = np.ones(dim, dtype=bool)

    def init_weights(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, w: np.ndarray, X: np.ndarray, y=None) -> float:
        diff = w[None, :] - X
        return float(0.5 * self.curvature * np.mean(np.sum(diff ** 2, axis=1)))

    def gradient(self, w: np.ndarray, X: np.ndarray, y=None) -> np.ndarray:
        return self.curvature * (w - X.mean(axis=0))

    def evaluate(self, w: np.ndarray, X: np.ndarray, y=None):
        return self.loss(w, X), float("nan")


class MlpSmall:
    """One-hidden-layer tanh network with sigmoid output and L2.

    Parameters are packed flat as [W1 (h×f), b1 (h), w2 (h), b2 (1)].
    Hidden-layer and output weights are prunable, biases are not.
    """

    def __init__(self, in_features: int, hidden: int, l2: float = 0.0):
        self.in_features = in_features
        self.hidden = hidden
        self.l2 = l2
        self.dim = mlp_dim(in_features, hidden)
        f, h = in_features, hidden
        self._s1 = f * h              # end of W1
        self._s2 = self._s1 + h       # end of b1
        self._s3 = self._s2 + h       # end of w2
        prunable = np.ones(self.dim, dtype=bool)
        prunable[self._s1:self._s2] = False   # b1
        prunable[self._s3:] = False           # b2
        self.prunable = prunable

    def init_weights(self, rng: np.random.Generator) -> np.ndarray:
        w = np.zeros(self.dim)
        scale = 1.0 / np.sqrt(self.in_features)
        w[:self._s1] = rng.normal(0.0, scale, self._s1)
        w[self._s2:self._s3] = rng.normal(0.0, 1.0 / np.sqrt(self.hidden),
                                          self.hidden)
        return w

    def _unpack(self, w: np.ndarray):
        f, h = self.in_features, self.hidden
        W1 = w[:self._s1].reshape(h, f)
        b1 = w[self._s1:self._s2]
        w2 = w[self._s2:self._s3]
        b2 = w[self._s3]
        return W1, b1, w2, b2

    def _forward(self, w: np.ndarray, X: np.ndarray):
        W1, b1, w2, b2 = self._unpack(w)
        a = np.tanh(X @ W1.T + b1)
        z = a @ w2 + b2
        return a, z

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        _, z = self._forward(w, X)
        ce = np.mean(np.logaddexp(0.0, z) - y * z)
        return float(ce + 0.5 * self.l2 * (w @ w))

    def gradient(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        W1, b1, w2, b2 = self._unpack(w)
        a, z = self._forward(w, X)
        n = X.shape[0]
        dz = (expit(z) - y) / n
        gw2 = a.T @ dz
        gb2 = dz.sum()
        da = np.outer(dz, w2) * (1.0 - a ** 2)
        gW1 = da.T @ X
        gb1 = da.sum(axis=0)
        grad = np.concatenate([gW1.ravel(), gb1, gw2, [gb2]])
        return grad + self.l2 * w

    def evaluate(self, w: np.ndarray, X: np.ndarray, y: np.ndarray):
        _, z = self._forward(w, X)
        return self.loss(w, X, y), float(np.mean((z > 0) == (y > 0.5)))


# --------------------------------------------------------------------------
# Convolutional preset (LeNet-style, 21,840 parameters on 28x28 inputs)
# --------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Extract all k×k patches (stride 1, valid) as (B, P, C·k·k)."""
    b, c, hh, ww = x.shape
    oh, ow = hh - k + 1, ww - k + 1
    s0, s1, s2, s3 = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, oh, ow, k, k), strides=(s0, s1, s2, s3, s2, s3))
    return patches.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * k * k)


def _col2im(cols: np.ndarray, x_shape, k: int) -> np.ndarray:
    """Scatter-add patch gradients back to the input layout."""
    b, c, hh, ww = x_shape
    oh, ow = hh - k + 1, ww - k + 1
    cols = cols.reshape(b, oh, ow, c, k, k)
    out = np.zeros(x_shape, dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            out[:, :, di:di + oh, dj:dj + ow] += cols[:, :, :, :, di, dj] \
                .transpose(0, 3, 1, 2)
    return out


def _maxpool2(x: np.ndarray):
    b, c, hh, ww = x.shape
    xr = x.reshape(b, c, hh // 2, 2, ww // 2, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(b, c, hh // 2, ww // 2, 4)
    idx = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool2_backward(dout: np.ndarray, idx: np.ndarray, x_shape):
    b, c, hh, ww = x_shape
    dxr = np.zeros((b, c, hh // 2, ww // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
    return dxr.reshape(b, c, hh // 2, ww // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(b, c, hh, ww)


class CnnMnist:
    """Two 5×5 conv layers (10, 20 channels) + FC-50 + softmax-10.

    Matches the classic 21,840-parameter digit classifier: conv, ReLU and
    2×2 max pooling twice, a 50-unit ReLU layer, then a 10-way softmax.
    Weights are prunable, biases are not.
    """

    IMAGE_SHAPE = (1, 28, 28)

    def __init__(self, l2: float = 0.0):
        self.l2 = l2
        self._shapes = [("c1w", (10, 1, 5, 5)), ("c1b", (10,)),
                        ("c2w", (20, 10, 5, 5)), ("c2b", (20,)),
                        ("f1w", (50, 320)), ("f1b", (50,)),
                        ("f2w", (10, 50)), ("f2b", (10,))]
        self._offsets = {}
        pos = 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            self._offsets[name] = (pos, pos + size, shape)
            pos += size
        self.dim = pos  # 21840
        prunable = np.ones(self.dim, dtype=bool)
        for name in ("c1b", "c2b", "f1b", "f2b"):
            lo, hi, _ = self._offsets[name]
            prunable[lo:hi] = False
        self.prunable = prunable

    def init_weights(self, rng: np.random.Generator) -> np.ndarray:
        w = np.zeros(self.dim)
        for name, shape in self._shapes:
            lo, hi, shp = self._offsets[name]
            if name.endswith("w"):
                fan_in = int(np.prod(shp[1:]))
                w[lo:hi] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), hi - lo)
        return w

    def _get(self, w, name):
        lo, hi, shape = self._offsets[name]
        return w[lo:hi].reshape(shape)

    def _forward(self, w: np.ndarray, X: np.ndarray):
        x = X.reshape(-1, *self.IMAGE_SHAPE)
        cache = {}
        c1w, c1b = self._get(w, "c1w"), self._get(w, "c1b")
        cols1 = _im2col(x, 5)
        z1 = cols1 @ c1w.reshape(10, -1).T + c1b
        z1 = z1.transpose(0, 2, 1).reshape(-1, 10, 24, 24)
        r1 = np.maximum(z1, 0.0)
        p1, idx1 = _maxpool2(r1)
        c2w, c2b = self._get(w, "c2w"), self._get(w, "c2b")
        cols2 = _im2col(p1, 5)
        z2 = cols2 @ c2w.reshape(20, -1).T + c2b
        z2 = z2.transpose(0, 2, 1).reshape(-1, 20, 8, 8)
        r2 = np.maximum(z2, 0.0)
        p2, idx2 = _maxpool2(r2)
        flat = p2.reshape(p2.shape[0], -1)
        f1w, f1b = self._get(w, "f1w"), self._get(w, "f1b")
        h = np.maximum(flat @ f1w.T + f1b, 0.0)
        f2w, f2b = self._get(w, "f2w"), self._get(w, "f2b")
        logits = h @ f2w.T + f2b
        cache.update(x=x, cols1=cols1, z1=z1, r1_shape=r1.shape, idx1=idx1,
                     p1=p1, cols2=cols2, z2=z2, idx2=idx2, p2=p2,
                     flat=flat, h=h, logits=logits)
        return cache

    @staticmethod
    def _softmax_ce(logits: np.ndarray, y: np.ndarray):
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        n = logits.shape[0]
        loss = float(np.mean(logz - shifted[np.arange(n), y.astype(int)]))
        probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        dlogits = probs
        dlogits[np.arange(n), y.astype(int)] -= 1.0
        return loss, dlogits / n

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        cache = self._forward(w, X)
        loss, _ = self._softmax_ce(cache["logits"], y)
        wt = w[self.prunable]
        return loss + 0.5 * self.l2 * float(wt @ wt)

    def gradient(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        cache = self._forward(w, X)
        _, dlogits = self._softmax_ce(cache["logits"], y)
        grad = np.zeros(self.dim)

        def put(name, value):
            lo, hi, _ = self._offsets[name]
            grad[lo:hi] = value.ravel()

        h, flat = cache["h"], cache["flat"]
        f2w = self._get(w, "f2w")
        put("f2w", dlogits.T @ h)
        put("f2b", dlogits.sum(axis=0))
        dh = (dlogits @ f2w) * (h > 0)
        f1w = self._get(w, "f1w")
        put("f1w", dh.T @ flat)
        put("f1b", dh.sum(axis=0))
        dflat = dh @ f1w
        dp2 = dflat.reshape(cache["p2"].shape)
        dr2 = _maxpool2_backward(dp2, cache["idx2"], cache["z2"].shape)
        dz2 = dr2 * (cache["z2"] > 0)
        dz2_cols = dz2.reshape(dz2.shape[0], 20, -1).transpose(0, 2, 1)
        c2w = self._get(w, "c2w")
        put("c2w", np.einsum("bpf,bpc->fc", dz2_cols, cache["cols2"]))
        put("c2b", dz2_cols.sum(axis=(0, 1)))
        dcols2 = dz2_cols @ c2w.reshape(20, -1)
        dp1 = _col2im(dcols2, cache["p1"].shape, 5)
        dr1 = _maxpool2_backward(dp1, cache["idx1"], cache["z1"].shape)
        dz1 = dr1 * (cache["z1"] > 0)
        dz1_cols = dz1.reshape(dz1.shape[0], 10, -1).transpose(0, 2, 1)
        put("c1w", np.einsum("bpf,bpc->fc", dz1_cols, cache["cols1"]))
        put("c1b", dz1_cols.sum(axis=(0, 1)))
        grad[self.prunable] += self.l2 * w[self.prunable]
        return grad

    def evaluate(self, w: np.ndarray, X: np.ndarray, y: np.ndarray):
        cache = self._forward(w, X)
        loss, _ = self._softmax_ce(cache["logits"], y)
        wt = w[self.prunable]
        acc = float(np.mean(cache["logits"].argmax(axis=1) == y.astype(int)))
        return loss + 0.5 * self.l2 * float(wt @ wt), acc


def make_task(spec: TaskSpec):
    """Instantiate the task described by ``spec`` (validates dimensions)."""
    if spec.kind == "logistic_l2":
        return LogisticL2(spec.dim, spec.l2)
    if spec.kind == "quadratic":
        return Quadratic(spec.dim, spec.curvature)
    if spec.kind == "mlp_small":
        f = spec.in_features
        if f == 0:
            f = (spec.dim - 2 * spec.hidden - 1) // spec.hidden
        task = MlpSmall(f, spec.hidden, spec.l2)
        if task.dim != spec.dim:
            raise ConfigurationError(
                f"mlp_small with in_features={f}, hidden={spec.hidden} has "
                f"{task.dim} parameters, spec says {spec.dim}")
        return task
    if spec.kind == "cnn_mnist":
        task = CnnMnist(spec.l2)
        if task.dim != spec.dim:
            raise ConfigurationError(
                f"cnn_mnist has {task.dim} parameters, spec says {spec.dim}")
        return task
    raise ConfigurationError(f"unknown task kind {spec.kind!r}")
