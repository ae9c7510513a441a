"""Synthetic trigger-class dataset, non-IID partitioning and CSV ingestion.

Each class is an isotropic Gaussian cluster.  Class means live in the
informative coordinates only; the trigger coordinates carry noise.  A
fraction of source-class samples carries the trigger pattern naturally while
keeping its true label (the keyword shows up in genuine source articles), so
benign training actively ties the pattern to the source class.  The trigger
test set takes fresh source-class samples and pins the trigger coordinates
to a fixed magnitude.  An optional balanced public pool supports a warm
start of the global model.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError


@dataclass(frozen=True)
class TriggerSpec:
    source_class: int = 3
    target_class: int = 2
    dims: tuple[int, ...] = (28, 29, 30, 31)
    magnitude: float = 3.0


@dataclass(frozen=True)
class DatasetConfig:
    n_classes: int = 4
    n_features: int = 32
    n_agents: int = 6
    samples_per_agent: int = 600
    class_separation: float = 4.0
    noise_std: float = 1.0
    dirichlet_alpha: float = 1.0
    n_test: int = 2000
    n_trigger_test: int = 1000
    natural_trigger_fraction: float = 0.05
    n_pretrain: int = 200
    trigger: TriggerSpec = field(default_factory=TriggerSpec)

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        if self.samples_per_agent < 1:
            raise ConfigError("samples_per_agent must be >= 1")
        if self.n_test < 1 or self.n_trigger_test < 1:
            raise ConfigError("test set sizes must be >= 1")
        if self.n_pretrain < 0:
            raise ConfigError("n_pretrain must be >= 0")
        if self.noise_std <= 0 or self.class_separation <= 0:
            raise ConfigError("noise_std and class_separation must be positive")
        if not 0.0 <= self.natural_trigger_fraction <= 1.0:
            raise ConfigError("natural_trigger_fraction must lie in [0, 1]")
        if not self.dirichlet_alpha > 0:
            raise ConfigError("dirichlet_alpha must be positive (inf allowed)")
        t = self.trigger
        dims = set(t.dims)
        if len(dims) != len(t.dims) or not dims:
            raise ConfigError("trigger dims must be a non-empty set of distinct indices")
        if self.n_features <= len(dims):
            raise ConfigError(
                f"n_features={self.n_features} leaves no informative coordinates "
                f"besides {len(dims)} trigger dims"
            )
        if min(dims) < 0 or max(dims) >= self.n_features:
            raise ConfigError("trigger dims out of range [0, n_features)")
        for c in (t.source_class, t.target_class):
            if not 0 <= c < self.n_classes:
                raise ConfigError(f"trigger class {c} out of range")
        if t.source_class == t.target_class:
            raise ConfigError("trigger source and target class must differ")


@dataclass
class AgentShard:
    agent_id: int
    features: np.ndarray
    labels: np.ndarray
    claimed_size: int

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class FederatedDataset:
    shards: list[AgentShard]
    test_features: np.ndarray
    test_labels: np.ndarray
    trigger_features: np.ndarray
    trigger_labels: np.ndarray
    trigger: TriggerSpec
    n_classes: int
    proportions: np.ndarray | None = None
    certificate: float | None = None
    pretrain_features: np.ndarray | None = None
    pretrain_labels: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.test_features.shape[1]

    def label_histograms(self) -> list[list[int]]:
        return [np.bincount(s.labels, minlength=self.n_classes).tolist() for s in self.shards]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for s in self.shards:
            h.update(np.ascontiguousarray(s.features).tobytes())
            h.update(np.ascontiguousarray(s.labels).tobytes())
        for arr in (self.test_features, self.test_labels, self.trigger_features, self.trigger_labels,
                    self.pretrain_features, self.pretrain_labels):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def apply_trigger(features: np.ndarray, trigger: TriggerSpec) -> np.ndarray:
    out = np.array(features, dtype=np.float64, copy=True)
    out[:, list(trigger.dims)] = trigger.magnitude
    return out


def _class_means(cfg: DatasetConfig, rng: np.random.Generator) -> np.ndarray:
    informative = [d for d in range(cfg.n_features) if d not in set(cfg.trigger.dims)]
    k = len(informative)
    raw = rng.standard_normal((k, cfg.n_classes))
    if cfg.n_classes <= k:
        # orthonormal directions put every pair of means exactly class_separation apart
        q, _ = np.linalg.qr(raw)
        dirs = q[:, : cfg.n_classes].T
    else:
        dirs = (raw / np.linalg.norm(raw, axis=0)).T
    means = np.zeros((cfg.n_classes, cfg.n_features))
    means[:, informative] = dirs * (cfg.class_separation / math.sqrt(2.0))
    return means


def _sample(means, labels, noise_std, rng):
    return means[labels] + noise_std * rng.standard_normal((len(labels), means.shape[1]))


def _stamp_natural(features, labels, cfg: DatasetConfig, rng):
    # a share of genuine source-class samples carries the pattern and keeps its true label
    if cfg.natural_trigger_fraction == 0.0:
        return features
    hit = (labels == cfg.trigger.source_class) & (rng.random(len(labels)) < cfg.natural_trigger_fraction)
    features[hit] = apply_trigger(features[hit], cfg.trigger)
    return features


def generate_synthetic(cfg: DatasetConfig, rng: np.random.Generator) -> FederatedDataset:
    """Draw agent shards, a balanced clean test set and a trigger test set."""
    cfg.validate()
    means = _class_means(cfg, rng)
    c = cfg.n_classes
    if math.isinf(cfg.dirichlet_alpha):
        proportions = np.full((cfg.n_agents, c), 1.0 / c)
    else:
        proportions = rng.dirichlet(np.full(c, cfg.dirichlet_alpha), size=cfg.n_agents)

    shards = []
    for i in range(cfg.n_agents):
        counts = rng.multinomial(cfg.samples_per_agent, proportions[i])
        labels = np.repeat(np.arange(c), counts)
        labels = labels[rng.permutation(len(labels))]
        feats = _stamp_natural(_sample(means, labels, cfg.noise_std, rng), labels, cfg, rng)
        shards.append(AgentShard(i, feats, labels.astype(np.int64), len(labels)))

    test_labels = np.arange(cfg.n_test) % c
    test_labels = test_labels[rng.permutation(cfg.n_test)].astype(np.int64)
    test_features = _stamp_natural(_sample(means, test_labels, cfg.noise_std, rng), test_labels, cfg, rng)

    trig_labels = np.full(cfg.n_trigger_test, cfg.trigger.source_class, dtype=np.int64)
    trig_features = apply_trigger(_sample(means, trig_labels, cfg.noise_std, rng), cfg.trigger)

    ds = FederatedDataset(
        shards=shards,
        test_features=test_features,
        test_labels=test_labels,
        trigger_features=trig_features,
        trigger_labels=trig_labels,
        trigger=cfg.trigger,
        n_classes=c,
        proportions=proportions,
    )
    if cfg.n_pretrain:
        # balanced public pool for warm-starting the global model, drawn last
        # so enabling it leaves every other draw unchanged
        pl = (np.arange(cfg.n_pretrain) % c)[rng.permutation(cfg.n_pretrain)].astype(np.int64)
        ds.pretrain_features = _stamp_natural(_sample(means, pl, cfg.noise_std, rng), pl, cfg, rng)
        ds.pretrain_labels = pl
    ds.certificate = separability_certificate(ds)
    return ds


def separability_certificate(ds: FederatedDataset) -> float:
    """Clean test accuracy of a linear discriminant fit on the pooled shards.

    Shared-covariance LDA is the natural linear classifier for equal-variance
    Gaussian clusters, and it is fit in closed form, so it serves as an
    independent upper reference for what the federated model can reach.
    """
    x = np.concatenate([s.features for s in ds.shards])
    y = np.concatenate([s.labels for s in ds.shards])
    c = ds.n_classes
    means = np.zeros((c, x.shape[1]))
    priors = np.zeros(c)
    for k in range(c):
        xk = x[y == k]
        priors[k] = max(len(xk), 1) / len(x)
        means[k] = xk.mean(axis=0) if len(xk) else 0.0
    centered = x - means[y]
    cov = centered.T @ centered / max(len(x) - c, 1)
    cov += 1e-9 * np.eye(cov.shape[0])
    prec = np.linalg.inv(cov)
    w = means @ prec
    b = -0.5 * np.einsum("kd,kd->k", w, means) + np.log(priors)
    pred = np.argmax(ds.test_features @ w.T + b, axis=1)
    return float(np.mean(pred == ds.test_labels))


def dataset_manifest(ds: FederatedDataset, cfg: DatasetConfig | None = None, seed: int | None = None) -> dict:
    out = {
        "seed": seed,
        "n_classes": ds.n_classes,
        "n_features": ds.n_features,
        "certificate": ds.certificate,
        "checksum": ds.checksum(),
        "shard_sizes": [len(s) for s in ds.shards],
        "label_histograms": ds.label_histograms(),
        "trigger": asdict(ds.trigger),
    }
    if ds.proportions is not None:
        out["dirichlet_proportions"] = [[float(p) for p in row] for row in ds.proportions]
    if cfg is not None:
        d = asdict(cfg)
        if math.isinf(cfg.dirichlet_alpha):
            d["dirichlet_alpha"] = "inf"
        out["config"] = d
    return out


def write_manifest(ds: FederatedDataset, path, cfg=None, seed=None) -> None:
    Path(path).write_text(json.dumps(dataset_manifest(ds, cfg, seed), indent=2, sort_keys=True) + "\n")


# --- CSV ingestion -------------------------------------------------------


def write_csv(path, features: np.ndarray, labels: np.ndarray) -> None:
    path = Path(path)
    d = features.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(d)])
        for x, y in zip(features, labels):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


def load_csv(path, n_classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``label,f0,f1,...`` file into ``(features, labels)``.

    Any malformed row raises :class:`IngestionError` naming its line number
    (the header is line 1).
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError("file not found", path=path)
    feats, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError("empty file", path=path)
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "label" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
            raise IngestionError("header must be label,f0,f1,...", path=path, line=1)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise IngestionError(f"expected {width} fields, got {len(row)}", path=path, line=lineno)
            try:
                lab = int(row[0])
            except ValueError:
                raise IngestionError(f"non-integer label {row[0]!r}", path=path, line=lineno) from None
            if lab < 0 or (n_classes is not None and lab >= n_classes):
                raise IngestionError(f"label {lab} out of range", path=path, line=lineno)
            try:
                vals = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise IngestionError(f"non-numeric field ({exc})", path=path, line=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise IngestionError("non-finite feature value", path=path, line=lineno)
            labels.append(lab)
            feats.append(vals)
    x = np.array(feats, dtype=np.float64).reshape(len(feats), width - 1)
    return x, np.array(labels, dtype=np.int64)


def export_dataset(ds: FederatedDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in ds.shards:
        write_csv(directory / f"agent_{s.agent_id}.csv", s.features, s.labels)
    write_csv(directory / "test_clean.csv", ds.test_features, ds.test_labels)
    write_csv(directory / "test_trigger.csv", ds.trigger_features, ds.trigger_labels)
    if ds.pretrain_features is not None:
        write_csv(directory / "pretrain.csv", ds.pretrain_features, ds.pretrain_labels)


def load_dataset(directory, n_classes: int, trigger: TriggerSpec) -> FederatedDataset:
    """Rebuild a :class:`FederatedDataset` from the files written by :func:`export_dataset`."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError("dataset directory not found", path=directory)
    agent_files = sorted(directory.glob("agent_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not agent_files:
        raise IngestionError("no agent_*.csv files", path=directory)
    shards = []
    for i, p in enumerate(agent_files):
        x, y = load_csv(p, n_classes)
        if len(y) == 0:
            raise IngestionError("agent shard is empty", path=p)
        shards.append(AgentShard(i, x, y, len(y)))
    tx, ty = load_csv(directory / "test_clean.csv", n_classes)
    gx, gy = load_csv(directory / "test_trigger.csv", n_classes)
    if np.any(gy != trigger.source_class):
        raise IngestionError("trigger test set must contain only source-class samples", path=directory / "test_trigger.csv")
    ds = FederatedDataset(shards, tx, ty, gx, gy, trigger, n_classes)
    if (directory / "pretrain.csv").is_file():
        ds.pretrain_features, ds.pretrain_labels = load_csv(directory / "pretrain.csv", n_classes)
    ds.certificate = separability_certificate(ds)
    return ds
