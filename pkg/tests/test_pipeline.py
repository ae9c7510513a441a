from dataclasses import replace

import numpy as np
import pytest

from grmp import model as mdl
from grmp.attack.pipeline import AttackConfig, GrmpAttacker, TriggerObjective, weighted_mean
from grmp.config import ExperimentConfig
from grmp.dataset import DatasetConfig, generate_synthetic
from grmp.engine import run_experiment
from grmp.errors import ConfigError
from grmp.numerics import cosine_similarity


@pytest.fixture(scope="module")
def traced_run():
    """Default experiment with every attacker call recorded."""
    calls = []
    original = GrmpAttacker.act

    def spy(self, t, benign, sizes, w_prev):
        out = original(self, t, benign, sizes, w_prev)
        calls.append((t, np.array(benign), np.array(sizes, dtype=float), np.array(w_prev), out))
        return out

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(GrmpAttacker, "act", spy)
        report = run_experiment(ExperimentConfig())
    return report, calls


@pytest.fixture(scope="module")
def setting():
    cfg = DatasetConfig(samples_per_agent=200, n_test=200, n_trigger_test=100, n_pretrain=40)
    ds = generate_synthetic(cfg, np.random.default_rng(3))
    arch = mdl.Architecture(ds.n_features, ds.n_classes, 8)
    w = arch.init_params(np.random.default_rng(4))
    train = mdl.TrainConfig(hidden=8)
    benign = np.stack([mdl.local_train(arch, w, s.features, s.labels, train) for s in ds.shards[:4]])
    sizes = np.array([s.claimed_size for s in ds.shards[:4]], dtype=float)
    return ds, arch, w, benign, sizes


def make_attacker(setting, **kw):
    ds, arch, *_ = setting
    cfg = replace(AttackConfig(phase_switch_round=2, vgae_epochs=30), **kw)
    return GrmpAttacker(cfg, arch, ds.shards[4:], ds.trigger, seed=7, claimed_size=150)


def test_phase_schedule_in_default_run(traced_run):
    report, calls = traced_run
    switch = report.config.attack.phase_switch_round
    assert [c[0] for c in calls] == list(range(1, report.config.rounds + 1))
    for rec in report.records:
        assert rec.phase == ("learning" if rec.round < switch else "attack")


def test_attack_rounds_respect_ball_and_improve(traced_run):
    _, calls = traced_run
    attacked = 0
    for t, benign, sizes, _, out in calls:
        if out.phase != "attack" or out.skipped:
            continue
        attacked += 1
        center = weighted_mean(benign, sizes)
        for u in out.updates:
            assert np.linalg.norm(u - center) <= out.d_t + 1e-9
        for before, after in zip(out.objective_before, out.objective_after):
            assert after >= before
        assert out.lam >= 0 and out.rho >= 0
        assert set(out.selection) <= {0, 1}
        assert np.dot(out.selection, out.distances) <= 10.0 + 1e-9
    assert attacked > 0


def test_learning_rounds_mimic_benign_mean(traced_run):
    _, calls = traced_run
    for t, benign, sizes, _, out in calls:
        if out.phase == "learning":
            for u in out.updates:
                assert cosine_similarity(u, weighted_mean(benign, sizes)) >= 0.99


def test_crafted_samples_come_from_source_class(setting):
    ds = setting[0]
    att = make_attacker(setting)
    trig = ds.trigger
    x, y = att.crafted
    assert np.all(y == trig.target_class)
    assert np.all(x[:, list(trig.dims)] == trig.magnitude)
    pool_x = np.concatenate([s.features for s in ds.shards[4:]])
    pool_y = np.concatenate([s.labels for s in ds.shards[4:]])
    free = [d for d in range(ds.n_features) if d not in trig.dims]
    assert np.array_equal(x[:, free], pool_x[pool_y == trig.source_class][:, free])


def test_crafting_falls_back_without_source_samples(setting):
    ds, arch, *_ = setting
    src = ds.trigger.source_class
    shard = ds.shards[4]
    keep = shard.labels != src
    stripped = replace(shard, features=shard.features[keep], labels=shard.labels[keep])
    att = GrmpAttacker(AttackConfig(), arch, [stripped], ds.trigger, 0, 100)
    assert len(att.crafted[0]) == keep.sum()


def test_same_seed_same_uploads(setting):
    _, _, w, benign, sizes = setting
    for kw in ({}, {"kl_weight": 0.0, "deterministic": True}):
        a = make_attacker(setting, **kw).act(3, benign, sizes, w)
        b = make_attacker(setting, **kw).act(3, benign, sizes, w)
        assert len(a.updates) == 2
        for u, v in zip(a.updates, b.updates):
            assert np.array_equal(u, v)


def test_skips_when_budget_admits_fewer_than_two(setting):
    _, _, w, benign, sizes = setting
    out = make_attacker(setting, gamma=0.0).act(3, benign, sizes, w)
    assert out.phase == "attack" and out.skipped == "selection"
    for u in out.updates:
        assert cosine_similarity(u, weighted_mean(benign, sizes)) >= 0.99


def test_naive_strategy_reverses_benign_direction(setting):
    _, _, w, benign, sizes = setting
    out = make_attacker(setting, strategy="naive").act(3, benign, sizes, w)
    expected = w - 5.0 * (weighted_mean(benign, sizes) - w)
    for u in out.updates:
        assert np.allclose(u, expected, rtol=0, atol=1e-12)


def test_benign_strategy_never_attacks(setting):
    att = make_attacker(setting, strategy="benign")
    assert {att.phase(t) for t in range(1, 30)} == {"learning"}


def test_weighted_mean_example():
    out = weighted_mean([[0.0, 2.0], [4.0, 6.0]], [1, 3])
    assert out.tolist() == [3.0, 5.0]


def test_trigger_objective_gradient(rng):
    arch = mdl.Architecture(4, 3, 3)
    w_bar = arch.init_params(rng)
    obj = TriggerObjective(arch, w_bar, 0.3, rng.normal(size=(8, 4)), rng.integers(0, 3, 8),
                           rng.normal(size=(10, 4)), rng.integers(0, 3, 10), 2.0)
    w = w_bar + 0.2 * rng.normal(size=arch.n_params)
    _, grad = obj(w)
    h = 1e-6
    fd = np.array([(obj(w + h * e)[0] - obj(w - h * e)[0]) / (2 * h) for e in np.eye(arch.n_params)])
    assert np.linalg.norm(grad - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


@pytest.mark.parametrize("field,value", [
    ("strategy", "chaos"), ("phase_switch_round", 0), ("d_t", -1.0), ("d_t_mode", "both"),
    ("nodes", 0), ("clean_weight", -1.0), ("claimed_size", 0),
])
def test_attack_config_validation(field, value):
    with pytest.raises(ConfigError):
        replace(AttackConfig(), **{field: value}).validate()
