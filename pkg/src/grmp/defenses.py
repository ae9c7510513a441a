"""Distance- and similarity-based server defenses.

Filters (:func:`dynamic_cosine_filter`, :func:`krum`, :func:`multi_krum`)
return a :class:`DefenseVerdict` and leave aggregation to the engine.
Robust statistics (:func:`trimmed_mean`, :func:`coordinate_median`,
:func:`geometric_median`) return the aggregated vector directly.

Uploads are passed as ``(ids, vectors)`` with ``vectors`` an ``n x M``
array; ties are always broken towards the smaller agent id.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .numerics import cosine_similarity


@dataclass
class DefenseVerdict:
    accepted: list[int]
    rejected: list[int]
    scores: dict[int, float] = field(default_factory=dict)
    threshold: float | None = None

    def is_accepted(self, agent_id: int) -> bool:
        return agent_id in self.accepted


def _stack(vectors) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError(f"expected a non-empty n x M array of uploads, got shape {x.shape}")
    return x


def _split(ids, keep_mask) -> tuple[list[int], list[int]]:
    acc = sorted(int(i) for i, k in zip(ids, keep_mask) if k)
    rej = sorted(int(i) for i, k in zip(ids, keep_mask) if not k)
    return acc, rej


CENTERS = ("mean", "median")
STATISTICS = ("moment", "robust")
# scales the median absolute deviation to a standard deviation under normality
MAD_SCALE = 1.4826


def similarity_scores(vectors, reference=None, mode: str = "cohort", center: str = "mean") -> np.ndarray:
    """Per-upload cosine score used by the dynamic filter.

    ``mode="cohort"`` compares raw uploads, ``mode="delta"`` first subtracts
    ``reference`` (the previous global model) and compares update
    directions.  ``center="mean"`` scores each upload against the mean of
    the *other* uploads; ``center="median"`` scores everyone against the
    coordinate-wise median of all uploads, which a minority of colluding
    copies cannot drag.
    """
    x = _stack(vectors)
    if mode == "delta":
        if reference is None:
            raise InputError("delta mode needs the previous global model")
        x = x - np.asarray(reference, dtype=np.float64)
    elif mode != "cohort":
        raise ConfigError(f"unknown similarity mode {mode!r}")
    if center not in CENTERS:
        raise ConfigError(f"unknown similarity centre {center!r}")
    n = len(x)
    if n == 1:
        return np.ones(1)
    if center == "median":
        ref = np.median(x, axis=0)
        return np.array([cosine_similarity(v, ref) for v in x])
    total = x.sum(axis=0)
    return np.array([cosine_similarity(x[i], (total - x[i]) / (n - 1)) for i in range(n)])


def threshold_verdict(ids, scores, kappa: float, statistic: str = "moment") -> DefenseVerdict:
    """Accept every score at or above ``centre - kappa * spread``.

    ``statistic="moment"`` uses the mean and standard deviation of the
    round's scores.  ``statistic="robust"`` uses the median and the scaled
    median absolute deviation, falling back to the standard deviation when
    more than half the scores coincide.  Zero spread accepts everyone.
    """
    s = np.asarray(scores, dtype=np.float64)
    if statistic == "moment":
        center, spread = float(np.mean(s)), float(np.std(s))
    elif statistic == "robust":
        center = float(np.median(s))
        spread = MAD_SCALE * float(np.median(np.abs(s - center)))
        if spread == 0.0:
            spread = float(np.std(s))
            center = center if spread else float(np.mean(s))
    else:
        raise ConfigError(f"unknown threshold statistic {statistic!r}")
    if spread == 0.0:
        thr = min(center, float(np.min(s)))
    elif math.isinf(kappa):
        thr = -math.inf
    else:
        thr = center - kappa * spread
    keep = s >= thr
    acc, rej = _split(ids, keep)
    return DefenseVerdict(acc, rej, {int(i): float(v) for i, v in zip(ids, s)}, thr)


def dynamic_cosine_filter(ids, vectors, prev_global=None, kappa: float = 2.0, mode: str = "cohort",
                          center: str = "mean", statistic: str = "moment") -> DefenseVerdict:
    """Adaptive-threshold cosine filter.

    The threshold is recomputed every round from that round's scores, so it
    drifts with the population instead of being a fixed cut-off.
    """
    x = _stack(vectors)
    if len(x) < 2:
        raise InputError("dynamic_cosine_filter needs at least 2 uploads")
    return threshold_verdict(ids, similarity_scores(x, prev_global, mode, center), kappa, statistic)


def krum_scores(vectors, f: int) -> np.ndarray:
    x = _stack(vectors)
    n = len(x)
    k = n - f - 2
    if n < 2 * f + 3:
        warnings.warn(f"Krum assumes n >= 2f + 3 (n={n}, f={f}); guarantees do not hold", stacklevel=3)
    if k < 1 or k > n - 1:
        k = min(max(k, 1), max(n - 1, 0))
        warnings.warn(f"Krum neighbour count clamped to {k}", stacklevel=3)
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(d2[i], i)
        scores[i] = np.sum(np.sort(others)[:k])
    return scores


def multi_krum(ids, vectors, f: int, m: int) -> DefenseVerdict:
    """Accept the ``m`` uploads with the lowest Krum scores."""
    x = _stack(vectors)
    if not 1 <= m <= len(x):
        raise ConfigError(f"multi_krum m={m} outside [1, {len(x)}]")
    scores = krum_scores(x, f)
    order = sorted(range(len(x)), key=lambda i: (scores[i], int(ids[i])))
    keep = np.zeros(len(x), dtype=bool)
    keep[order[:m]] = True
    acc, rej = _split(ids, keep)
    return DefenseVerdict(acc, rej, {int(i): float(s) for i, s in zip(ids, scores)}, None)


def krum(ids, vectors, f: int) -> DefenseVerdict:
    return multi_krum(ids, vectors, f, 1)


def trim_count(n: int, fraction: float) -> int:
    if not 0.0 <= fraction < 0.5:
        raise ConfigError("trim fraction must lie in [0, 0.5)")
    # the tolerance keeps 0.1 * 30 from rounding up to 4
    k = math.ceil(fraction * n - 1e-9)
    if 2 * k >= n:
        raise ConfigError(f"trimming {k} from each tail of {n} values leaves nothing")
    return k


def trimmed_mean(vectors, fraction: float) -> np.ndarray:
    x = _stack(vectors)
    k = trim_count(len(x), fraction)
    s = np.sort(x, axis=0)
    return s[k : len(x) - k].mean(axis=0)


def coordinate_median(vectors) -> np.ndarray:
    return np.median(_stack(vectors), axis=0)


def _newton_direction(diff, d, g):
    """Newton step for the sum of distances, solved through an n x n system.

    The Hessian is ``s I - U^T W U`` with ``U`` the unit vectors, ``W`` the
    inverse distances and ``s`` their sum; the Woodbury identity keeps the
    solve at the number of uploads instead of the model dimension.
    """
    w = 1.0 / d
    s = w.sum()
    u = diff * w[:, None]
    inner = np.diag(d) - (u @ u.T) / s
    try:
        z = np.linalg.solve(inner, u @ g)
    except np.linalg.LinAlgError:
        return None
    step = -(g / s + (u.T @ z) / (s * s))
    return step if np.all(np.isfinite(step)) else None


def _optimal_input_point(x):
    """An input point that minimises the summed distance, if any does.

    A point repeated ``m`` times is optimal exactly when the unit vectors
    towards all other points sum to a vector of norm at most ``m``.  Near
    equality the minimiser need not be unique (collinear inputs), so those
    cases are left to the iteration, which lands mid-segment.
    """
    for k in range(len(x)):
        diff = x - x[k]
        d = np.linalg.norm(diff, axis=1)
        same = d == 0.0
        pull = (diff[~same] / d[~same, None]).sum(axis=0)
        if np.linalg.norm(pull) < same.sum() - 1e-9 * len(x):
            return x[k].copy()
    return None


def geometric_median(vectors, tol: float = 1e-10, max_iter: int = 1000, eps: float = 1e-8) -> np.ndarray:
    """Minimiser of the summed Euclidean distance to the uploads.

    Input points are tested for optimality first; if none qualifies the
    minimiser lies where the objective is smooth.  From the coordinate
    mean each iteration then takes a damped Newton step or the Weiszfeld
    update, whichever lowers the objective more (Weiszfeld alone crawls
    when the points are nearly collinear).  Stops once the gradient, a sum
    of unit vectors, has norm below ``tol``.  An iterate landing exactly on
    an input point moves ``eps`` along the pull of the others.
    """
    x = _stack(vectors)
    if len(x) == 1:
        return x[0].copy()
    at_input = _optimal_input_point(x)
    if at_input is not None:
        return at_input
    scale = max(1.0, float(np.max(np.abs(x))))

    def objective(y):
        return float(np.linalg.norm(x - y, axis=1).sum())

    y = x.mean(axis=0)
    f = objective(y)
    for _ in range(max_iter):
        diff = y - x
        d = np.linalg.norm(diff, axis=1)
        hit = d <= 1e-14 * scale
        if np.any(hit):
            pull = -(diff[~hit] / d[~hit, None]).sum(axis=0)
            y = y + eps * scale * pull / np.linalg.norm(pull)
            f = objective(y)
            continue
        g = (diff / d[:, None]).sum(axis=0)
        if np.linalg.norm(g) < tol:
            return y
        s = float((1.0 / d).sum())
        best_y = y - g / s  # Weiszfeld update
        best_f = objective(best_y)
        step = _newton_direction(diff, d, g)
        if step is not None:
            # near the optimum the objective stops resolving progress; within
            # rounding noise Newton is trusted over the slower Weiszfeld update
            noise = 1e-13 * f
            t = 1.0
            for _ in range(40):
                fc = objective(y + t * step)
                if fc <= f + noise:
                    if fc <= best_f + noise:
                        best_y, best_f = y + t * step, fc
                    break
                t *= 0.5
        y, f = best_y, best_f
    warnings.warn(f"geometric median did not converge in {max_iter} iterations", RuntimeWarning, stacklevel=2)
    return y


def geometric_median_objective(vectors, point) -> float:
    x = _stack(vectors)
    return float(np.linalg.norm(x - point, axis=1).sum())


ROBUST_AGGREGATORS = ("trimmed_mean", "median", "geometric_median")
FILTERS = ("none", "dynamic_cosine", "krum", "multi_krum")


@dataclass(frozen=True)
class DefenseConfig:
    """Server defense for one experiment; exactly one strategy per run."""

    name: str = "dynamic_cosine"
    kappa: float = 2.0
    mode: str = "delta"
    center: str = "median"
    statistic: str = "robust"
    f: int = 2
    m: int | None = None
    trim_fraction: float = 0.2
    tol: float = 1e-10
    max_iter: int = 1000

    def validate(self) -> None:
        if self.name not in FILTERS + ROBUST_AGGREGATORS:
            raise ConfigError(f"defense must be one of {FILTERS + ROBUST_AGGREGATORS}, got {self.name!r}")
        if self.mode not in ("cohort", "delta"):
            raise ConfigError(f"unknown similarity mode {self.mode!r}")
        if self.center not in CENTERS:
            raise ConfigError(f"unknown similarity centre {self.center!r}")
        if self.statistic not in STATISTICS:
            raise ConfigError(f"unknown threshold statistic {self.statistic!r}")
        if not self.kappa >= 0:
            raise ConfigError("kappa must be >= 0")
        if self.f < 0:
            raise ConfigError("f must be >= 0")
        if self.m is not None and self.m < 1:
            raise ConfigError("m must be >= 1")
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ConfigError("trim_fraction must lie in [0, 0.5)")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter >= 1")


def apply_defense(cfg: DefenseConfig, ids, vectors, prev_global=None):
    """Run the configured defense on one round's uploads.

    Returns ``(verdict, robust_vector)``.  Filters leave ``robust_vector``
    as ``None`` so the engine averages the accepted uploads; robust
    aggregators accept everyone and hand back the aggregate directly.
    """
    ids = [int(i) for i in ids]
    x = _stack(vectors)
    name = cfg.name
    if name == "none":
        return DefenseVerdict(sorted(ids), [], {}, None), None
    if name == "dynamic_cosine":
        return dynamic_cosine_filter(ids, x, prev_global, cfg.kappa, cfg.mode, cfg.center, cfg.statistic), None
    if name == "krum":
        return krum(ids, x, cfg.f), None
    if name == "multi_krum":
        m = cfg.m if cfg.m is not None else max(1, len(x) - cfg.f)
        return multi_krum(ids, x, cfg.f, min(m, len(x))), None
    everyone = DefenseVerdict(sorted(ids), [], {}, None)
    if name == "trimmed_mean":
        return everyone, trimmed_mean(x, cfg.trim_fraction)
    if name == "median":
        return everyone, coordinate_median(x)
    if name == "geometric_median":
        return everyone, geometric_median(x, cfg.tol, cfg.max_iter)
    raise ConfigError(f"unknown defense {name!r}")
