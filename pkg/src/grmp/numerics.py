"""Dense linear-algebra helpers, activations and seeded random streams.

Matrices are plain ``numpy.ndarray`` objects in float64; nothing here keeps
mutable state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

SYMMETRY_TOL = 1e-10


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise InputError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def euclidean_distance(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.linalg.norm(a - b))


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``.

    A zero-norm argument yields 0.0 rather than NaN: a dead column carries
    no correlation information.
    """
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise InputError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = float(u @ v) / (nu * nv)
    return min(1.0, max(-1.0, c))


def column_cosine_matrix(f: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between the columns of ``f``.

    Zero columns get 0 everywhere, including their diagonal entry.
    """
    f = np.asarray(f, dtype=np.float64)
    norms = np.linalg.norm(f, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = f / safe
    sim = unit.T @ unit
    dead = norms == 0.0
    sim[dead, :] = 0.0
    sim[:, dead] = 0.0
    live = ~dead
    idx = np.flatnonzero(live)
    sim[idx, idx] = 1.0
    sim = 0.5 * (sim + sim.T)
    return np.clip(sim, -1.0, 1.0)


@dataclass(frozen=True)
class SpectralFactors:
    """Eigenpairs of a symmetric matrix: ``m = basis @ diag(eigenvalues) @ basis.T``."""

    basis: np.ndarray
    eigenvalues: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.basis * self.eigenvalues) @ self.basis.T


def spectral_decompose(m) -> SpectralFactors:
    """Symmetric eigendecomposition with eigenvalues sorted descending.

    Each eigenvector is flipped so its largest-magnitude entry is positive
    (first such entry on exact ties), which makes the basis reproducible.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"spectral_decompose needs a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise InputError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    if vecs.size:
        pivot = np.argmax(np.abs(vecs), axis=0)
        signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
        signs[signs == 0] = 1.0
        vecs = vecs * signs
    return SpectralFactors(basis=vecs, eigenvalues=vals)


def laplacian(adjacency: np.ndarray) -> np.ndarray:
    """Combinatorial Laplacian ``diag(A 1) - A``."""
    a = np.asarray(adjacency, dtype=np.float64)
    return np.diag(a.sum(axis=1)) - a


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    """Logistic function evaluated without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log_sigmoid(x):
    """``log(sigmoid(x))`` computed stably."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def rng_stream(seed: int, *stream_id: int) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, stream_id...)``.

    PCG64 seeded through ``SeedSequence`` draws the same sequence on every
    platform, and distinct stream ids give statistically independent streams.
    """
    if seed < 0:
        raise InputError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.PCG64(ss))
