"""Round-synchronised federated learning with an optional model-poisoning adversary.

One round: benign agents train locally from the broadcast model, the
adversary reads the benign uploads and produces its own, the server runs the
configured defense and averages the survivors weighted by claimed data size,
then the new global model is broadcast.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as mdl
from .attack.pipeline import GrmpAttacker
from .config import ExperimentConfig
from .dataset import FederatedDataset, generate_synthetic
from .defenses import apply_defense
from .errors import ExperimentError, InputError, TrainingDivergedError
from .numerics import rng_stream

log = logging.getLogger(__name__)

DATA_STREAM = 1
INIT_STREAM = 2


@dataclass
class RoundUpload:
    agent_id: int
    update: np.ndarray
    claimed_size: int
    is_malicious: bool = False

    def __post_init__(self):
        if self.claimed_size < 1:
            raise InputError(f"agent {self.agent_id}: claimed_size must be >= 1")


@dataclass
class GlobalModel:
    round: int
    params: np.ndarray


@dataclass
class RoundRecord:
    round: int
    phase: str
    global_accuracy: float
    asr: float
    global_loss: float
    scores: dict[int, float]
    accepted: dict[int, bool]
    local_accuracy: dict[int, float]
    threshold: float | None
    lam: float | None
    rho: float | None
    beta: list[int]
    attacker_distance: float | None
    skipped: bool = False
    benign_ids: tuple[int, ...] = ()

    @property
    def mean_benign_local_accuracy(self) -> float:
        vals = [v for i, v in self.local_accuracy.items() if i in self.benign_ids]
        return float(np.mean(vals)) if vals else math.nan


@dataclass
class RunReport:
    config: ExperimentConfig
    seed: int
    certificate: float
    initial_accuracy: float
    initial_asr: float
    records: list[RoundRecord] = field(default_factory=list)
    globals: list[GlobalModel] = field(default_factory=list)

    @property
    def attacker_ids(self) -> list[int]:
        return [i for i in range(self.config.agents) if i not in self.benign_ids]

    @property
    def benign_ids(self) -> list[int]:
        return list(range(self.config.agents - self.config.attackers))


def aggregate(uploads: list[RoundUpload], mask=None, round_index: int = 0) -> GlobalModel:
    """Size-weighted average of the uploads kept by ``mask``.

    Every included upload counts with ``claimed_size / D`` where ``D`` sums
    the claimed sizes of the included uploads, so malicious uploads enter
    exactly like benign ones and rejected uploads drop out of ``D``.
    Uploads are summed in ascending agent-id order so the result does not
    depend on arrival order.
    """
    if not uploads:
        raise InputError("aggregate needs at least one upload")
    if mask is None:
        mask = [1] * len(uploads)
    if len(mask) != len(uploads):
        raise InputError("mask length must match the number of uploads")
    kept = sorted((u for u, m in zip(uploads, mask) if m), key=lambda u: u.agent_id)
    if not kept:
        raise InputError("every upload was rejected")
    dim = {np.shape(u.update) for u in kept}
    if len(dim) != 1:
        raise InputError(f"inconsistent upload dimensions {sorted(dim)}")
    total = float(sum(u.claimed_size for u in kept))
    params = np.zeros_like(np.asarray(kept[0].update, dtype=np.float64))
    for u in kept:
        params += (u.claimed_size / total) * np.asarray(u.update, dtype=np.float64)
    return GlobalModel(round_index, params)


def global_loss(uploads: list[RoundUpload], mask, shards: dict, arch: mdl.Architecture, reg: float) -> float:
    """Size-weighted sum of each included agent's local loss at its own upload.

    ``shards[agent_id] = (features, labels)``; for a malicious identity pass
    the attacker-crafted samples so its claimed loss has the same form.
    """
    if mask is None:
        mask = [1] * len(uploads)
    kept = sorted((u for u, m in zip(uploads, mask) if m), key=lambda u: u.agent_id)
    if not kept:
        raise InputError("every upload was rejected")
    total = float(sum(u.claimed_size for u in kept))
    return math.fsum(
        (u.claimed_size / total) * mdl.local_loss(arch, u.update, *shards[u.agent_id], reg) for u in kept
    )


def asr(arch: mdl.Architecture, w, trigger_features, target_class: int) -> float:
    """Fraction of trigger-stamped samples classified as the target class."""
    x = np.asarray(trigger_features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise InputError("trigger test set must be a non-empty 2-D array")
    return float(np.mean(mdl.predict(arch, w, x) == target_class))


def _snapshot(path: Path | None, t: int, w_prev, uploads, attacker, exc) -> Path | None:
    if path is None:
        return None
    path.mkdir(parents=True, exist_ok=True)
    target = path / f"snapshot_round{t}.json"
    state = {
        "round": t,
        "error": f"{type(exc).__name__}: {exc}",
        "global_params": [float(v) for v in w_prev],
        "uploads": {str(u.agent_id): [float(v) for v in u.update] for u in uploads},
    }
    if attacker is not None:
        s = attacker.state
        state["attack_state"] = {"lam": s.lam, "rho": s.rho, "phase": s.phase, "selection": list(s.selection)}
    target.write_text(json.dumps(state, sort_keys=True))
    return target


def run_experiment(cfg: ExperimentConfig, dataset: FederatedDataset | None = None,
                   snapshot_dir=None) -> RunReport:
    """Execute ``cfg.rounds`` rounds and collect per-round metrics.

    Attackers take the highest agent ids.  The dataset is generated from the
    seed unless one is passed in (it must have ``cfg.agents`` shards).
    """
    cfg.validate()
    seed = cfg.seed
    ds = dataset if dataset is not None else generate_synthetic(cfg.dataset, rng_stream(seed, DATA_STREAM))
    if len(ds.shards) != cfg.agents:
        raise InputError(f"dataset has {len(ds.shards)} shards, config expects {cfg.agents}")
    arch = mdl.Architecture(ds.n_features, ds.n_classes, cfg.train.hidden)
    trig = ds.trigger
    benign_ids = cfg.benign_ids
    attacker_ids = cfg.attacker_ids
    benign_sizes = np.array([ds.shards[i].claimed_size for i in benign_ids], dtype=np.float64)

    attacker = None
    claimed = None
    if attacker_ids:
        claimed = cfg.attack.claimed_size or max(1, int(round(float(benign_sizes.mean()))))
        attacker = GrmpAttacker(cfg.attack, arch, [ds.shards[i] for i in attacker_ids], trig, seed, claimed)
    loss_data = {i: (ds.shards[i].features, ds.shards[i].labels) for i in benign_ids}
    if attacker is not None:
        for i in attacker_ids:
            loss_data[i] = attacker.crafted

    w = arch.init_params(rng_stream(seed, INIT_STREAM))
    if cfg.train.pretrain_steps and ds.pretrain_features is not None:
        # warm start: the federation fine-tunes a model pre-trained on a small public pool
        warm = replace(cfg.train, local_steps=cfg.train.pretrain_steps)
        w = mdl.local_train(arch, w, ds.pretrain_features, ds.pretrain_labels, warm)
    report = RunReport(
        cfg, seed, ds.certificate,
        mdl.evaluate(arch, w, ds.test_features, ds.test_labels),
        asr(arch, w, ds.trigger_features, trig.target_class),
    )
    report.globals.append(GlobalModel(0, w.copy()))
    snap = Path(snapshot_dir) if snapshot_dir is not None else None

    for t in range(1, cfg.rounds + 1):
        uploads: list[RoundUpload] = []
        try:
            for i in benign_ids:
                s = ds.shards[i]
                wi = mdl.local_train(arch, w, s.features, s.labels, cfg.train)
                uploads.append(RoundUpload(i, wi, s.claimed_size))
            phase, lam, rho, beta = "none", None, None, []
            if attacker is not None:
                act = attacker.act(t, [u.update for u in uploads], benign_sizes, w)
                phase, lam, rho, beta = act.phase, act.lam, act.rho, list(act.selection)
                for j, upd in zip(attacker_ids, act.updates):
                    uploads.append(RoundUpload(j, np.asarray(upd, dtype=np.float64), claimed, True))
            ids = [u.agent_id for u in uploads]
            vecs = np.stack([u.update for u in uploads])
            verdict, robust = apply_defense(cfg.defense, ids, vecs, w)
            mask = [1 if verdict.is_accepted(i) else 0 for i in ids]
            skipped = False
            if robust is not None:
                new_w = robust
            elif any(mask):
                new_w = aggregate(uploads, mask, t).params
            else:
                log.warning("round %d: every upload rejected, keeping the previous global model", t)
                new_w, skipped = w.copy(), True
            if not np.all(np.isfinite(new_w)):
                raise FloatingPointError("aggregated global model is non-finite")
            gloss = global_loss(uploads, mask, loss_data, arch, cfg.train.reg) if any(mask) else math.nan
        except (TrainingDivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
            where = _snapshot(snap, t, w, uploads, attacker, exc)
            raise ExperimentError(f"{type(exc).__name__}: {exc}", t, where) from exc

        w = new_w
        report.globals.append(GlobalModel(t, w.copy()))
        local_acc = {u.agent_id: mdl.evaluate(arch, u.update, ds.test_features, ds.test_labels) for u in uploads}
        dist = None
        if attacker is not None:
            dist = max(float(np.linalg.norm(u.update - w)) for u in uploads if u.is_malicious)
        report.records.append(RoundRecord(
            round=t,
            phase=phase,
            global_accuracy=mdl.evaluate(arch, w, ds.test_features, ds.test_labels),
            asr=asr(arch, w, ds.trigger_features, trig.target_class),
            global_loss=gloss,
            scores=dict(verdict.scores),
            accepted={i: bool(m) for i, m in zip(ids, mask)},
            local_accuracy=local_acc,
            threshold=verdict.threshold,
            lam=lam,
            rho=rho,
            beta=beta,
            attacker_distance=dist,
            skipped=skipped,
            benign_ids=tuple(benign_ids),
        ))
    return report


def run_repeats(cfg: ExperimentConfig, snapshot_dir=None) -> list[RunReport]:
    """Repeat ``r`` uses seed ``cfg.seed + r``; everything else is shared."""
    return [
        run_experiment(cfg.with_overrides(seed=cfg.seed + r), snapshot_dir=snapshot_dir)
        for r in range(cfg.repeats)
    ]
