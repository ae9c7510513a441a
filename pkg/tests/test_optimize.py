import numpy as np
import pytest
from hypothesis import given, strategies as st

from grmp.attack.optimize import (
    AttackState, brute_force_select, dual_update, finalize_malicious, learning_phase_update, project_ball,
    select_inputs,
)
from grmp.errors import InputError
from grmp.numerics import cosine_similarity


def exhaustive(d, budget):
    """Vectorised enumeration of every subset, independent of the DP."""
    n = len(d)
    masks = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(bool)
    totals = masks.astype(float) @ d
    ok = totals <= budget + 1e-12 * max(1.0, abs(budget))
    counts = masks.sum(axis=1)
    best_count = counts[ok].max()
    pool = np.flatnonzero(ok & (counts == best_count))
    best_total = totals[pool].min()
    pool = [i for i in pool if totals[i] == best_total]
    keys = [tuple(np.flatnonzero(masks[i])) for i in pool]
    return masks[pool[min(range(len(keys)), key=keys.__getitem__)]].astype(int)


def test_knapsack_examples():
    assert select_inputs([0.5, 0.2, 0.9, 0.1], 10.0).tolist() == [1, 1, 1, 1]
    assert select_inputs([0.5, 0.2, 0.9, 0.1], 0.8).tolist() == [1, 1, 0, 1]
    assert select_inputs([0.3], 0.2).tolist() == [0]
    assert select_inputs([], 1.0).tolist() == []


def test_knapsack_rejects_bad_distances():
    with pytest.raises(InputError):
        select_inputs([-1.0, 2.0], 1.0)
    with pytest.raises(InputError):
        select_inputs([np.nan], 1.0)


def test_knapsack_tie_breaks():
    # equal counts and totals: lexicographically smallest index set wins
    assert select_inputs([1.0, 1.0, 1.0], 2.0).tolist() == [1, 1, 0]
    # equal counts: smaller total wins
    assert select_inputs([2.0, 1.0, 1.5], 2.6).tolist() == [0, 1, 1]


def test_knapsack_matches_exhaustive_search():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(1, 16))
        if rng.random() < 0.3:
            d = rng.integers(0, 4, n).astype(float)  # forces ties
        else:
            d = rng.uniform(0, 3, n)
        budget = float(rng.uniform(0, d.sum() + 0.5))
        got = select_inputs(d, budget)
        ref = exhaustive(d, budget)
        assert got.sum() == ref.sum()
        assert d[got == 1].sum() == pytest.approx(d[ref == 1].sum(), abs=1e-12)
        assert got.tolist() == ref.tolist()


@given(st.lists(st.floats(0, 10), min_size=1, max_size=8), st.floats(0, 40))
def test_knapsack_matches_reference_property(d, budget):
    d = np.array(d)
    a, b = select_inputs(d, budget), brute_force_select(d, budget)
    assert a.tolist() == b.tolist()
    assert d[a == 1].sum() <= budget + 1e-9


def test_dual_update_examples():
    s = AttackState(lam=0.7, rho=0.4, step_lam=0.1, step_rho=0.2)
    same = dual_update(s, 0.0, 0.0, 1)
    assert (same.lam, same.rho) == (0.7, 0.4)
    loose = dual_update(s, 100.0, 100.0, 1)
    assert (loose.lam, loose.rho) == (0.0, 0.0)
    tight = dual_update(s, -2.0, -3.0, 1)
    assert tight.lam == pytest.approx(0.7 + 0.1 * 2.0, abs=1e-15)
    assert tight.rho == pytest.approx(0.4 + 0.2 * 3.0, abs=1e-15)
    later = dual_update(s, -2.0, 0.0, 4)
    assert later.lam == pytest.approx(0.7 + 0.1 * 2.0 / 2.0, abs=1e-15)
    with pytest.raises(InputError):
        dual_update(s, 0.0, 0.0, 0)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.integers(1, 50))
def test_dual_variables_stay_nonnegative(lam, rho, ds, bs, t):
    out = dual_update(AttackState(lam=lam, rho=rho), ds, bs, t)
    assert out.lam >= 0 and out.rho >= 0


def test_state_validation():
    with pytest.raises(InputError):
        AttackState(lam=-1)
    with pytest.raises(InputError):
        AttackState(phase="sleep")


@given(st.integers(0, 2**16), st.floats(0, 5))
def test_project_ball_feasible(seed, radius):
    rng = np.random.default_rng(seed)
    c, w = rng.normal(size=7), rng.normal(size=7) * 10
    p = project_ball(w, c, radius)
    assert np.linalg.norm(p - c) <= radius
    if np.linalg.norm(w - c) <= radius:
        assert np.array_equal(p, w)



def test_project_ball_radius_below_float_spacing():
    center = np.array([1.0, -2.0, 3.0])
    p = project_ball(center + 5.0, center, 1e-300)
    assert np.linalg.norm(p - center) <= 1e-300


def quadratic(target):
    def objective(w):
        diff = w - target
        return -float(diff @ diff), -2.0 * diff
    return objective


def test_finalize_degenerate_ball(rng):
    wg = rng.normal(size=5)
    fin = finalize_malicious(rng.normal(size=(3, 5)), wg, AttackState(d_t=0.0), quadratic(np.ones(5)), k=2)
    assert all(np.array_equal(u, wg) for u in fin.updates)


def test_finalize_zero_steps_returns_candidate(rng):
    wg = np.zeros(4)
    cand = np.array([[0.1, 0.0, 0.0, 0.0], [0.0, 0.2, 0.0, 0.0]])
    fin = finalize_malicious(cand, wg, AttackState(d_t=1.0, lam=0.0, rho=0.0), quadratic(np.ones(4)), k=1, steps=0)
    assert np.array_equal(fin.updates[0], cand[fin.chosen_rows[0]])


def test_finalize_ranks_by_penalised_value():
    wg = np.zeros(2)
    cand = np.array([[0.0, 0.0], [0.9, 0.9]])
    obj = quadratic(np.ones(2))
    cheap = finalize_malicious(cand, wg, AttackState(d_t=2.0, lam=0.0), obj, k=1, steps=0)
    assert cheap.chosen_rows == [1]
    costly = finalize_malicious(cand, wg, AttackState(d_t=2.0, lam=100.0), obj, k=1, steps=0)
    assert costly.chosen_rows == [0]


@given(st.integers(0, 2**16), st.floats(0.01, 3), st.integers(1, 3))
def test_finalize_feasible_and_improving(seed, radius, k):
    rng = np.random.default_rng(seed)
    wg = rng.normal(size=6)
    cand = wg + rng.normal(size=(4, 6)) * 2
    fin = finalize_malicious(cand, wg, AttackState(d_t=radius), quadratic(rng.normal(size=6) * 3), k=k)
    assert len(fin.updates) == k
    for u, before, after in zip(fin.updates, fin.candidate_values, fin.final_values):
        assert np.linalg.norm(u - wg) <= radius + 1e-9
        assert after >= before
    with pytest.raises(InputError):
        finalize_malicious(cand, wg, AttackState(), quadratic(wg), k=0)


def test_learning_phase_update_examples(rng):
    benign = rng.normal(size=(4, 50)) + 3.0
    sizes = np.array([100, 200, 300, 400])
    mean = (sizes[:, None] * benign).sum(axis=0) / sizes.sum()
    assert np.allclose(learning_phase_update(benign, sizes, rng, 0.0), mean, rtol=0, atol=1e-14)
    a = learning_phase_update(benign, sizes, np.random.default_rng(9), 1e-3)
    b = learning_phase_update(benign, sizes, np.random.default_rng(9), 1e-3)
    assert np.array_equal(a, b)
    assert cosine_similarity(a, mean) >= 0.99
