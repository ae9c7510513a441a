"""Variational graph autoencoder written directly in numpy.

Encoder: ``depth - 1`` ReLU GCN layers followed by two linear GCN heads
producing the latent mean and log-variance.  Decoder: ``sigmoid(Z Z^T)``.
Messages propagate over the edge-label graph ``(A + 1) / 2`` so that
signed cosine adjacencies still have positive degrees.
The training loss is the mean binary cross-entropy between the decoded
adjacency and the edge labels plus ``kl_weight`` times the mean Gaussian KL
term.  Gradients are derived by hand; ``tests/test_vgae.py`` checks them
against central differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, TrainingDivergedError
from ..numerics import log_sigmoid, sigmoid

DEGREE_FLOOR = 1e-12
PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class VgaeConfig:
    hidden: int = 16
    latent: int = 8
    depth: int = 2
    epochs: int = 150
    learning_rate: float = 0.01
    kl_weight: float = 1e-3
    deterministic: bool = False


@dataclass
class VgaeModel:
    hidden_weights: list[np.ndarray]
    w_mean: np.ndarray
    w_logvar: np.ndarray
    kl_weight: float = 1e-3
    latent: np.ndarray | None = None
    history: list[float] = field(default_factory=list)

    def parameters(self) -> list[np.ndarray]:
        return [*self.hidden_weights, self.w_mean, self.w_logvar]

    def copy(self) -> "VgaeModel":
        return VgaeModel(
            [w.copy() for w in self.hidden_weights],
            self.w_mean.copy(),
            self.w_logvar.copy(),
            self.kl_weight,
            None if self.latent is None else self.latent.copy(),
            list(self.history),
        )


def edge_labels(adjacency: np.ndarray) -> np.ndarray:
    """Map cosine similarities in [-1, 1] to BCE targets in [0, 1]."""
    return (np.asarray(adjacency, dtype=np.float64) + 1.0) / 2.0


def normalized_propagation(adjacency: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with degrees floored at ``DEGREE_FLOOR``."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"adjacency must be square, got {a.shape}")
    at = a + np.eye(a.shape[0])
    deg = np.maximum(at.sum(axis=1), DEGREE_FLOOR)
    inv = 1.0 / np.sqrt(deg)
    return inv[:, None] * at * inv[None, :]


def gcn_layer(z_prev, adjacency, weight, activation: str = "relu") -> np.ndarray:
    out = normalized_propagation(adjacency) @ np.asarray(z_prev, dtype=np.float64) @ weight
    if activation == "relu":
        return np.maximum(out, 0.0)
    if activation == "identity":
        return out
    raise InputError(f"unknown activation {activation!r}")


def init_model(n_inputs: int, cfg: VgaeConfig, rng: np.random.Generator) -> VgaeModel:
    if cfg.depth < 1:
        raise InputError("GCN depth must be >= 1")

    def glorot(fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, (fan_in, fan_out))

    dims = [n_inputs] + [cfg.hidden] * (cfg.depth - 1)
    hidden = [glorot(a, b) for a, b in zip(dims[:-1], dims[1:])]
    return VgaeModel(hidden, glorot(dims[-1], cfg.latent), glorot(dims[-1], cfg.latent), cfg.kl_weight)


def _forward(model: VgaeModel, prop: np.ndarray, x: np.ndarray, noise: np.ndarray | None):
    acts = [x]
    pres = []
    h = x
    for w in model.hidden_weights:
        pre = prop @ h @ w
        h = np.maximum(pre, 0.0)
        pres.append(pre)
        acts.append(h)
    ph = prop @ h
    mean = ph @ model.w_mean
    logvar = ph @ model.w_logvar
    if noise is None:
        z = mean
    else:
        z = mean + np.exp(0.5 * logvar) * noise
    return {"acts": acts, "pres": pres, "ph": ph, "mean": mean, "logvar": logvar, "z": z}


def decode(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return sigmoid(z @ z.T)


def kl_divergence(mean: np.ndarray, logvar: np.ndarray) -> float:
    n = mean.shape[0]
    return float(-0.5 / n * np.sum(1.0 + logvar - mean**2 - np.exp(logvar)))


def vgae_loss(a_hat, labels, mean, logvar, kl_weight: float) -> float:
    """BCE between decoded probabilities and edge labels plus weighted KL.

    Probabilities are clamped to ``[PROB_CLAMP, 1 - PROB_CLAMP]``.
    """
    p = np.clip(np.asarray(a_hat, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise InputError("decoded and target adjacency shapes differ")
    recon = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    if kl_weight == 0.0:
        return recon
    return recon + kl_weight * kl_divergence(mean, logvar)


def _loss_from_logits(logits, labels) -> float:
    # BCE written on logits: softplus(s) - y*s, with softplus(s) = -log sigmoid(-s)
    return float(np.mean(-log_sigmoid(-logits) - labels * logits))


def loss_and_grads(model: VgaeModel, adjacency, x, labels=None, noise=None):
    """Total loss and gradients w.r.t. ``model.parameters()`` (same order)."""
    y = edge_labels(adjacency) if labels is None else labels
    prop = normalized_propagation(edge_labels(adjacency))
    fw = _forward(model, prop, np.asarray(x, dtype=np.float64), noise)
    z, mean, logvar = fw["z"], fw["mean"], fw["logvar"]
    n = z.shape[0]
    logits = z @ z.T
    loss = _loss_from_logits(logits, y)
    kw = model.kl_weight
    if kw:
        loss += kw * kl_divergence(mean, logvar)

    g_logits = (sigmoid(logits) - y) / (n * n)
    g_z = (g_logits + g_logits.T) @ z
    g_mean = g_z.copy()
    g_logvar = np.zeros_like(logvar)
    if noise is not None:
        g_logvar += g_z * noise * 0.5 * np.exp(0.5 * logvar)
    if kw:
        g_mean += kw * mean / n
        g_logvar += kw * 0.5 / n * (np.exp(logvar) - 1.0)

    ph = fw["ph"]
    g_wmean = ph.T @ g_mean
    g_wlogvar = ph.T @ g_logvar
    g_h = prop.T @ (g_mean @ model.w_mean.T + g_logvar @ model.w_logvar.T)

    g_hidden = [None] * len(model.hidden_weights)
    for layer in range(len(model.hidden_weights) - 1, -1, -1):
        g_pre = g_h * (fw["pres"][layer] > 0)
        a_prev = fw["acts"][layer]
        g_hidden[layer] = (prop @ a_prev).T @ g_pre
        g_h = prop.T @ g_pre @ model.hidden_weights[layer].T
    return loss, [*g_hidden, g_wmean, g_wlogvar], fw


def encode(model: VgaeModel, adjacency, x, rng: np.random.Generator | None = None, deterministic: bool = True):
    """Latent embedding ``Z``; samples with the reparameterization trick unless deterministic."""
    prop = normalized_propagation(edge_labels(adjacency))
    x = np.asarray(x, dtype=np.float64)
    noise = None
    if not deterministic:
        if rng is None:
            raise InputError("stochastic encoding needs an rng")
        noise = rng.standard_normal((x.shape[0], model.w_mean.shape[1]))
    fw = _forward(model, prop, x, noise)
    if not np.all(np.isfinite(fw["z"])):
        raise TrainingDivergedError("non-finite latent embedding")
    return fw["z"], fw["mean"], fw["logvar"]


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_vgae(adjacency, x, cfg: VgaeConfig, rng: np.random.Generator, model: VgaeModel | None = None):
    """Fit the autoencoder to ``adjacency`` with node features ``x``.

    Returns ``(model, a_hat)`` where ``a_hat`` is decoded from the latent
    mean.  ``model.history`` holds the per-epoch training loss.
    """
    if cfg.epochs < 1:
        raise InputError("epochs must be >= 1")
    adjacency = np.asarray(adjacency, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if model is None:
        model = init_model(x.shape[1], cfg, rng)
    labels = edge_labels(adjacency)
    params = model.parameters()
    opt = _Adam(params, cfg.learning_rate)
    latent_dim = model.w_mean.shape[1]
    for epoch in range(cfg.epochs):
        noise = None if cfg.deterministic else rng.standard_normal((x.shape[0], latent_dim))
        loss, grads, _ = loss_and_grads(model, adjacency, x, labels, noise)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"VGAE loss became non-finite at epoch {epoch}", step=epoch, loss=loss)
        model.history.append(loss)
        if cfg.learning_rate > 0:
            opt.step(params, grads)
    z, _, _ = encode(model, adjacency, x, deterministic=True)
    model.latent = z
    return model, decode(z)
