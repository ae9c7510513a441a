"""One-hidden-layer softmax classifier over flat parameter vectors.

Parameters are flattened layer-major, each matrix row-major::

    [W1 (d x h), b1 (h), W2 (h x C), b2 (C)]      hidden width h > 0
    [W (d x C), b (C)]                            hidden width 0

Width 0 degenerates to multinomial logistic regression, whose loss is
convex; the tests rely on that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, TrainingDivergedError
from .numerics import log_softmax, softmax


@dataclass(frozen=True)
class Architecture:
    n_features: int
    n_classes: int
    hidden: int = 16

    @property
    def n_params(self) -> int:
        d, c, h = self.n_features, self.n_classes, self.hidden
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c

    def unpack(self, w: np.ndarray):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.n_params,):
            raise InputError(f"parameter vector has shape {w.shape}, expected ({self.n_params},)")
        d, c, h = self.n_features, self.n_classes, self.hidden
        if h == 0:
            return w[: d * c].reshape(d, c), w[d * c :]
        i = 0
        w1 = w[i : i + d * h].reshape(d, h)
        i += d * h
        b1 = w[i : i + h]
        i += h
        w2 = w[i : i + h * c].reshape(h, c)
        i += h * c
        return w1, b1, w2, w[i:]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        d, c, h = self.n_features, self.n_classes, self.hidden
        if h == 0:
            return np.concatenate([rng.normal(0.0, 0.01, d * c), np.zeros(c)])
        w1 = rng.normal(0.0, math.sqrt(2.0 / d), d * h)
        w2 = rng.normal(0.0, math.sqrt(1.0 / h), h * c)
        return np.concatenate([w1, np.zeros(h), w2, np.zeros(c)])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.3
    local_steps: int = 5
    reg: float = 0.01
    hidden: int = 16
    pretrain_steps: int = 20

    def validate(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.local_steps < 0:
            raise ConfigError("local_steps must be >= 0")
        if not 0.0 <= self.reg <= 1.0:
            raise ConfigError("reg must lie in [0, 1]")
        if self.hidden < 0:
            raise ConfigError("hidden width must be >= 0")
        if self.pretrain_steps < 0:
            raise ConfigError("pretrain_steps must be >= 0")


def logits(arch: Architecture, w, x: np.ndarray) -> np.ndarray:
    parts = arch.unpack(w)
    if arch.hidden == 0:
        wm, b = parts
        return x @ wm + b
    w1, b1, w2, b2 = parts
    return np.maximum(x @ w1 + b1, 0.0) @ w2 + b2


def _check_batch(arch, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(y) == 0:
        raise InputError("empty sample set")
    if x.ndim != 2 or x.shape[1] != arch.n_features or x.shape[0] != len(y):
        raise InputError(f"feature matrix shape {x.shape} does not match architecture/labels")
    return x, y


def local_loss(arch: Architecture, w, x, y, reg: float) -> float:
    """Mean cross-entropy plus ``reg * ||w||^2``."""
    x, y = _check_batch(arch, x, y)
    lp = log_softmax(logits(arch, w, x))
    data = -float(np.mean(lp[np.arange(len(y)), y]))
    return data + reg * float(np.dot(w, w))


def loss_and_gradient(arch: Architecture, w, x, y, reg: float, sample_weight=None):
    """Loss and its analytic gradient in one forward/backward pass.

    ``sample_weight`` replaces the uniform ``1/n`` weighting of the data
    term when given (it must already be normalized by the caller).
    """
    x, y = _check_batch(arch, x, y)
    w = np.asarray(w, dtype=np.float64)
    n = len(y)
    sw = np.full(n, 1.0 / n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    rows = np.arange(n)
    if arch.hidden == 0:
        wm, b = arch.unpack(w)
        z = x @ wm + b
        lp = log_softmax(z)
        g = softmax(z)
        g[rows, y] -= 1.0
        g *= sw[:, None]
        grad = np.concatenate([(x.T @ g).ravel(), g.sum(axis=0)])
    else:
        w1, b1, w2, b2 = arch.unpack(w)
        pre = x @ w1 + b1
        hid = np.maximum(pre, 0.0)
        z = hid @ w2 + b2
        lp = log_softmax(z)
        g = softmax(z)
        g[rows, y] -= 1.0
        g *= sw[:, None]
        gh = (g @ w2.T) * (pre > 0)
        grad = np.concatenate([(x.T @ gh).ravel(), gh.sum(axis=0), (hid.T @ g).ravel(), g.sum(axis=0)])
    loss = -float(np.dot(sw, lp[rows, y])) + reg * float(np.dot(w, w))
    grad += 2.0 * reg * w
    return loss, grad


def gradient(arch: Architecture, w, x, y, reg: float) -> np.ndarray:
    return loss_and_gradient(arch, w, x, y, reg)[1]


def local_train(arch: Architecture, w0, x, y, cfg: TrainConfig, return_losses: bool = False):
    """Run ``cfg.local_steps`` full-batch gradient steps from ``w0``."""
    w = np.array(w0, dtype=np.float64, copy=True)
    losses = []
    for step in range(cfg.local_steps):
        loss, grad = loss_and_gradient(arch, w, x, y, cfg.reg)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(
                f"non-finite loss at local step {step} (loss={loss}, lr={cfg.learning_rate}, "
                f"|w|={float(np.linalg.norm(w)):.3e})",
                step=step,
                loss=loss,
            )
        losses.append(loss)
        w = w - cfg.learning_rate * grad
    if return_losses:
        return w, losses
    return w


def predict(arch: Architecture, w, x) -> np.ndarray:
    """Argmax class per row; ``np.argmax`` resolves ties to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return np.argmax(logits(arch, w, x), axis=1)


def evaluate(arch: Architecture, w, x, y) -> float:
    x, y = _check_batch(arch, x, y)
    return float(np.mean(predict(arch, w, x) == y))
