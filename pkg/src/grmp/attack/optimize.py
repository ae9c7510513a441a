"""Combinatorial selection, dual updates and malicious-model finalization."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..errors import InputError

# feasibility slack for sum(d) <= budget, absorbs summation-order rounding
BUDGET_TOL = 1e-12


@dataclass(frozen=True)
class AttackState:
    lam: float = 1.0
    rho: float = 1.0
    d_t: float = 1.0
    gamma: float = 10.0
    phase: str = "learning"
    step_lam: float = 0.1
    step_rho: float = 0.1
    selection: tuple[int, ...] = ()

    def __post_init__(self):
        if self.lam < 0 or self.rho < 0:
            raise InputError("dual variables must be non-negative")
        if self.d_t < 0 or self.gamma < 0:
            raise InputError("d_T and Gamma must be non-negative")
        if self.phase not in ("learning", "attack"):
            raise InputError(f"unknown phase {self.phase!r}")


def _fits(total: float, budget: float) -> bool:
    return total <= budget + BUDGET_TOL * max(1.0, abs(budget))


def select_inputs(distances, budget: float) -> np.ndarray:
    """0/1 knapsack: pick as many observed models as the distance budget allows.

    Every item is worth one unit and weighs its distance to the benign mean.
    The DP runs over the *value* axis (``best[k]`` = least total distance
    using exactly ``k`` items) so weights stay exact and no quantization is
    needed.  Among maximum-cardinality sets the one with the smaller total
    distance wins, then the lexicographically smallest index set.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1:
        raise InputError("distances must be a vector")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise InputError("distances must be finite and non-negative")
    n = len(d)
    inf = math.inf
    # best[i][k]: minimal total over items i..n-1 choosing exactly k of them.
    # Filling from the back lets the forward reconstruction prefer low indices.
    best = [[inf] * (n + 1) for _ in range(n + 1)]
    for i in range(n, -1, -1):
        best[i][0] = 0.0
    for i in range(n - 1, -1, -1):
        for k in range(1, n - i + 1):
            skip = best[i + 1][k]
            take = d[i] + best[i + 1][k - 1]
            best[i][k] = min(skip, take)
    k_star = 0
    for k in range(n, 0, -1):
        if _fits(best[0][k], budget):
            k_star = k
            break
    beta = np.zeros(n, dtype=np.int64)
    remaining = k_star
    target = best[0][k_star]
    used = 0.0
    for i in range(n):
        if remaining == 0:
            break
        take_total = used + d[i] + best[i + 1][remaining - 1]
        if math.isclose(take_total, target, rel_tol=1e-12, abs_tol=1e-15):
            beta[i] = 1
            used += d[i]
            remaining -= 1
    return beta


def brute_force_select(distances, budget: float) -> np.ndarray:
    """Exhaustive reference for :func:`select_inputs` (small ``n`` only)."""
    d = list(map(float, distances))
    n = len(d)
    best_key, best = None, None
    for mask in itertools.product((0, 1), repeat=n):
        total = math.fsum(x for x, b in zip(d, mask) if b)
        if not _fits(total, budget):
            continue
        chosen = tuple(i for i in range(n) if mask[i])
        key = (-len(chosen), total, chosen)
        if best_key is None or key < best_key:
            best_key, best = key, mask
    return np.array(best, dtype=np.int64)


def dual_update(state: AttackState, distance_slack: float, budget_slack: float, t: int = 1) -> AttackState:
    """Projected sub-gradient step on the multipliers.

    ``distance_slack = d_T - d(w'_j, w'_g)`` and ``budget_slack`` is the
    budget term of the Lagrangian, ``sum_i (Gamma - beta_i d_i)``.  A positive
    slack shrinks the multiplier, a violated constraint grows it.  Steps
    decay as ``1/sqrt(t)``.
    """
    if t < 1:
        raise InputError("round index must be >= 1")
    decay = 1.0 / math.sqrt(t)
    lam = max(0.0, state.lam - state.step_lam * decay * distance_slack)
    rho = max(0.0, state.rho - state.step_rho * decay * budget_slack)
    return replace(state, lam=lam, rho=rho)


def project_ball(w, center, radius: float) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    diff = w - center
    norm = float(np.linalg.norm(diff))
    if radius <= 0.0:
        return center.copy()
    if norm <= radius:
        return w.copy()
    out = center + diff * (radius / norm)
    # guard the last ulp so the returned point is inside the ball, not on its rounding edge
    shrink = 1e-15
    while float(np.linalg.norm(out - center)) > radius:
        if shrink >= 1.0:
            # radius below the float spacing around center: only center itself is safe
            return center.copy()
        out = center + (out - center) * (1.0 - shrink)
        shrink *= 2.0
    return out


Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class Finalization:
    updates: list[np.ndarray]
    chosen_rows: list[int]
    row_scores: np.ndarray
    candidate_values: list[float]
    final_values: list[float]
    trace: list[list[float]] = field(default_factory=list)


def finalize_malicious(
    candidates,
    w_global,
    state: AttackState,
    objective: Objective,
    k: int,
    selection_term: float = 0.0,
    steps: int = 20,
    step_size: float = 0.5,
    min_step: float = 1e-6,
) -> Finalization:
    """Turn reconstructed rows into ``k`` malicious models inside the d_T ball.

    ``objective(w)`` returns ``(value, gradient)`` of the attacker's goal for
    an uploaded model ``w`` (it already accounts for how ``w`` enters the
    contaminated global).  Rows are ranked by
    ``value - lam * d(row, w_global) + rho * selection_term``; each of the
    top ``k`` is projected into the ball and improved by projected gradient
    ascent with step halving, so the final value never falls below the
    projected candidate's.
    """
    cand = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if k < 1:
        raise InputError("k must be >= 1")
    w_global = np.asarray(w_global, dtype=np.float64)
    scores = np.empty(len(cand))
    for r, row in enumerate(cand):
        val, _ = objective(row)
        scores[r] = val - state.lam * float(np.linalg.norm(row - w_global)) + state.rho * selection_term
    order = sorted(range(len(cand)), key=lambda r: (-scores[r], r))
    chosen = [order[i % len(order)] for i in range(k)]

    updates, cand_vals, final_vals, trace = [], [], [], []
    for r in chosen:
        w = project_ball(cand[r], w_global, state.d_t)
        val, grad = objective(w)
        cand_vals.append(val)
        path = [val]
        eta = step_size
        for _ in range(steps):
            gnorm = float(np.linalg.norm(grad))
            if gnorm == 0.0 or state.d_t == 0.0:
                break
            while eta >= min_step:
                trial = project_ball(w + eta * grad / gnorm, w_global, state.d_t)
                tval, tgrad = objective(trial)
                if tval > val:
                    w, val, grad = trial, tval, tgrad
                    break
                eta *= 0.5
            else:
                break
            path.append(val)
        updates.append(w)
        final_vals.append(val)
        trace.append(path)
    return Finalization(updates, chosen, scores, cand_vals, final_vals, trace)


def learning_phase_update(benign, sizes, rng: np.random.Generator, noise_scale: float) -> np.ndarray:
    """Benign-mimicking upload: size-weighted benign mean plus Gaussian noise."""
    x = np.asarray(benign, dtype=np.float64)
    s = np.asarray(sizes, dtype=np.float64)
    mean = (s[:, None] * x).sum(axis=0) / s.sum()
    if noise_scale == 0.0:
        return mean
    return mean + noise_scale * rng.standard_normal(mean.shape)
