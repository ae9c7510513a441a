"""Round-level attacker: observes benign uploads and produces malicious ones."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .. import model as mdl
from ..dataset import AgentShard, TriggerSpec, apply_trigger
from ..errors import ConfigError, InputError
from ..numerics import rng_stream
from .graph import build_graph
from .gsp import gsp_reconstruct
from .optimize import AttackState, dual_update, finalize_malicious, learning_phase_update, select_inputs
from .vgae import VgaeConfig, train_vgae

log = logging.getLogger(__name__)

STRATEGIES = ("grmp", "naive", "benign")
# "relative" scales d_t by the largest observed benign distance to the benign mean
D_T_MODES = ("absolute", "relative")


@dataclass(frozen=True)
class AttackConfig:
    strategy: str = "grmp"
    phase_switch_round: int = 8
    d_t: float = 1.5
    d_t_mode: str = "relative"
    gamma: float = 10.0
    nodes: int = 32
    gcn_depth: int = 2
    vgae_hidden: int = 16
    vgae_latent: int = 8
    vgae_epochs: int = 150
    vgae_learning_rate: float = 0.01
    kl_weight: float = 1e-3
    deterministic: bool = False
    lam0: float = 1.0
    rho0: float = 1.0
    step_lam: float = 0.1
    step_rho: float = 0.1
    ascent_steps: int = 20
    ascent_step_size: float = 0.5
    clean_weight: float = 3.0
    learning_noise: float = 1e-3
    naive_scale: float = 5.0
    claimed_size: int | None = None

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"attack strategy must be one of {STRATEGIES}")
        if self.phase_switch_round < 1:
            raise ConfigError("phase_switch_round must be >= 1")
        if self.d_t < 0 or self.gamma < 0:
            raise ConfigError("d_t and gamma must be non-negative")
        if self.d_t_mode not in D_T_MODES:
            raise ConfigError(f"d_t_mode must be one of {D_T_MODES}")
        if self.nodes < 1 or self.gcn_depth < 1 or self.vgae_epochs < 1:
            raise ConfigError("nodes, gcn_depth and vgae_epochs must be >= 1")
        if self.vgae_hidden < 1 or self.vgae_latent < 1:
            raise ConfigError("VGAE widths must be >= 1")
        if min(self.lam0, self.rho0, self.step_lam, self.step_rho) < 0:
            raise ConfigError("dual variables and step sizes must be non-negative")
        if self.ascent_steps < 0 or self.ascent_step_size < 0:
            raise ConfigError("ascent settings must be non-negative")
        if self.learning_noise < 0 or self.kl_weight < 0 or self.clean_weight < 0:
            raise ConfigError("learning_noise, kl_weight and clean_weight must be non-negative")
        if self.claimed_size is not None and self.claimed_size < 1:
            raise ConfigError("claimed_size must be >= 1")

    def vgae(self) -> VgaeConfig:
        return VgaeConfig(
            hidden=self.vgae_hidden,
            latent=self.vgae_latent,
            depth=self.gcn_depth,
            epochs=self.vgae_epochs,
            learning_rate=self.vgae_learning_rate,
            kl_weight=self.kl_weight,
            deterministic=self.deterministic,
        )


@dataclass
class AttackRound:
    """What the attacker did in one round, for the reporter."""

    phase: str
    updates: list[np.ndarray]
    lam: float
    rho: float
    selection: list[int] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)
    d_t: float | None = None
    vgae_loss_first: float | None = None
    vgae_loss_last: float | None = None
    objective_before: list[float] = field(default_factory=list)
    objective_after: list[float] = field(default_factory=list)
    skipped: str | None = None


def weighted_mean(vectors, sizes) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    s = np.asarray(sizes, dtype=np.float64)
    return (s[:, None] * x).sum(axis=0) / s.sum()


class TriggerObjective:
    """Attacker goal evaluated at the contaminated global model.

    For an uploaded model ``w`` the estimated global is
    ``(1 - p) * w_bar + p * w`` with ``p`` the attackers' aggregate share.
    The value is the mean log-likelihood of the target class on
    trigger-stamped samples plus ``clean_weight`` times the cross-entropy on
    clean samples, so the attacker plants the trigger and may also push the
    global loss up.
    """

    def __init__(self, arch, w_bar, share, trig_x, trig_y, clean_x, clean_y, clean_weight):
        self.arch = arch
        self.w_bar = np.asarray(w_bar, dtype=np.float64)
        self.share = float(share)
        self.trig = (trig_x, trig_y)
        self.clean = (clean_x, clean_y)
        self.clean_weight = float(clean_weight)

    def global_estimate(self, w):
        return (1.0 - self.share) * self.w_bar + self.share * np.asarray(w, dtype=np.float64)

    def __call__(self, w):
        g = self.global_estimate(w)
        lt, gt = mdl.loss_and_gradient(self.arch, g, *self.trig, 0.0)
        value = -lt
        grad = -gt
        if self.clean_weight:
            lc, gc = mdl.loss_and_gradient(self.arch, g, *self.clean, 0.0)
            value += self.clean_weight * lc
            grad = grad + self.clean_weight * gc
        return value, self.share * grad


class GrmpAttacker:
    """Shared pipeline behind every malicious identity in the federation."""

    def __init__(self, cfg: AttackConfig, arch: mdl.Architecture, shards: list[AgentShard],
                 trigger: TriggerSpec, seed: int, claimed_size: int):
        cfg.validate()
        if not shards:
            raise InputError("attacker needs at least one identity")
        self.cfg = cfg
        self.arch = arch
        self.ids = [s.agent_id for s in shards]
        self.trigger = trigger
        self.seed = seed
        self.claimed_size = claimed_size
        clean_x = np.concatenate([s.features for s in shards])
        clean_y = np.concatenate([s.labels for s in shards])
        self.clean = (clean_x, clean_y)
        # the goal concerns source-class inputs, so those are the ones stamped;
        # an attacker holding none falls back to its whole pool
        src = clean_y == trigger.source_class
        pool = clean_x[src] if src.any() else clean_x
        self.crafted = (apply_trigger(pool, trigger), np.full(len(pool), trigger.target_class))
        self.state = AttackState(
            lam=cfg.lam0, rho=cfg.rho0, d_t=cfg.d_t, gamma=cfg.gamma,
            step_lam=cfg.step_lam, step_rho=cfg.step_rho,
        )

    @property
    def k(self) -> int:
        return len(self.ids)

    def phase(self, t: int) -> str:
        if self.cfg.strategy == "benign" or t < self.cfg.phase_switch_round:
            return "learning"
        return "attack"

    def _mimic(self, t, benign, sizes) -> list[np.ndarray]:
        return [
            learning_phase_update(benign, sizes, rng_stream(self.seed, 7, t, j), self.cfg.learning_noise)
            for j in self.ids
        ]

    def act(self, t: int, benign, sizes, w_prev) -> AttackRound:
        """Produce this round's malicious uploads from the observed benign ones."""
        benign = np.asarray(benign, dtype=np.float64)
        sizes = np.asarray(sizes, dtype=np.float64)
        phase = self.phase(t)
        self.state = replace(self.state, phase=phase)
        if phase == "learning":
            return AttackRound(phase, self._mimic(t, benign, sizes), self.state.lam, self.state.rho)
        if self.cfg.strategy == "naive":
            w_bar = weighted_mean(benign, sizes)
            bad = np.asarray(w_prev) - self.cfg.naive_scale * (w_bar - np.asarray(w_prev))
            return AttackRound(phase, [bad.copy() for _ in self.ids], self.state.lam, self.state.rho)
        return self._grmp(t, benign, sizes)

    def _grmp(self, t, benign, sizes) -> AttackRound:
        cfg = self.cfg
        w_bar = weighted_mean(benign, sizes)
        dists = np.linalg.norm(benign - w_bar, axis=1)
        beta = select_inputs(dists, self.state.gamma)
        rec = AttackRound("attack", [], self.state.lam, self.state.rho,
                          selection=beta.tolist(), distances=dists.tolist())
        sel = np.flatnonzero(beta)
        if len(sel) < 2:
            log.info("round %d: only %d benign models fit the budget, attack skipped", t, len(sel))
            rec.updates = self._mimic(t, benign, sizes)
            rec.skipped = "selection"
            return rec

        radius = cfg.d_t * float(dists[sel].max()) if cfg.d_t_mode == "relative" else cfg.d_t
        self.state = replace(self.state, d_t=radius)
        rec.d_t = radius

        graph = build_graph(benign[sel], min(cfg.nodes, benign.shape[1]))
        rng = rng_stream(self.seed, 11, t)
        vg, a_hat = train_vgae(graph.adjacency, graph.node_features.T, cfg.vgae(), rng)
        rec.vgae_loss_first = vg.history[0]
        rec.vgae_loss_last = vg.history[-1]
        # decoded edge probabilities go back to the cosine scale of the observed graph
        gsp = gsp_reconstruct(graph, 2.0 * a_hat - 1.0)

        total_benign = float(sizes.sum())
        share = self.k * self.claimed_size / (total_benign + self.k * self.claimed_size)
        objective = TriggerObjective(self.arch, w_bar, share, *self.crafted, *self.clean, cfg.clean_weight)
        selection_term = float(np.sum(self.state.gamma - beta * dists))
        fin = finalize_malicious(
            gsp.features, w_bar, self.state, objective, self.k,
            selection_term=selection_term, steps=cfg.ascent_steps, step_size=cfg.ascent_step_size,
        )
        rec.updates = fin.updates
        rec.objective_before = fin.candidate_values
        rec.objective_after = fin.final_values

        # slacks as the attacker estimates them before uploading
        contaminated = (total_benign * w_bar + self.claimed_size * np.sum(fin.updates, axis=0)) / (
            total_benign + self.k * self.claimed_size
        )
        dist_slack = min(self.state.d_t - float(np.linalg.norm(u - contaminated)) for u in fin.updates)
        budget_slack = selection_term
        self.state = dual_update(self.state, dist_slack, budget_slack, t)
        self.state = replace(self.state, selection=tuple(int(b) for b in beta))
        rec.lam, rec.rho = self.state.lam, self.state.rho
        if not all(math.isfinite(v) for v in fin.final_values):
            raise FloatingPointError("attack objective became non-finite")
        return rec
