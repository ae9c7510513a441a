"""Run artifacts: per-round CSV, JSON summary, full report and plot series.

Per-round CSV column order (fixed; ``n`` agents, ``b`` benign agents)::

    round, phase, global_accuracy, asr, global_loss, lambda, rho,
    attacker_distance, threshold, n_selected, mean_benign_local_accuracy,
    skipped,
    score_0, accepted_0, local_accuracy_0, ..., score_{n-1}, accepted_{n-1},
    local_accuracy_{n-1},
    beta_0, ..., beta_{b-1}

Floats are written with ``repr`` so a reload is exact; missing values
(no attacker, learning-phase dual variables, filters without a threshold)
are empty cells; booleans are ``0``/``1``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict
from .engine import RoundRecord, RunReport
from .errors import InputError

FIXED_COLUMNS = (
    "round", "phase", "global_accuracy", "asr", "global_loss", "lambda", "rho",
    "attacker_distance", "threshold", "n_selected", "mean_benign_local_accuracy", "skipped",
)
AGENT_COLUMNS = ("score", "accepted", "local_accuracy")
FIGURES = ("fig3", "fig4", "fig5", "fig6")


def csv_columns(agents: int, benign: int) -> list[str]:
    cols = list(FIXED_COLUMNS)
    for i in range(agents):
        cols += [f"{name}_{i}" for name in AGENT_COLUMNS]
    cols += [f"beta_{i}" for i in range(benign)]
    return cols


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _row(rec: RoundRecord, agents: int, benign: int) -> list[str]:
    cells = [
        rec.round, rec.phase, rec.global_accuracy, rec.asr, rec.global_loss, rec.lam, rec.rho,
        rec.attacker_distance, rec.threshold, int(sum(rec.beta)), rec.mean_benign_local_accuracy, rec.skipped,
    ]
    out = [c if isinstance(c, str) else _fmt(c) for c in cells]
    for i in range(agents):
        out += [_fmt(rec.scores.get(i)), _fmt(rec.accepted.get(i)), _fmt(rec.local_accuracy.get(i))]
    out += [_fmt(rec.beta[i]) if i < len(rec.beta) else "" for i in range(benign)]
    return out


def render_csv(report: RunReport) -> str:
    agents = report.config.agents
    benign = len(report.benign_ids)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_columns(agents, benign))
    for rec in report.records:
        writer.writerow(_row(rec, agents, benign))
    return buf.getvalue()


def _write(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def emit_csv(report: RunReport, path) -> Path:
    """Write the per-round CSV; a zero-round report gives a header-only file."""
    return _write(path, render_csv(report))


def read_csv(path) -> list[dict]:
    """Parse an emitted CSV back into typed dicts (empty cells become ``None``)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = {}
        for key, val in raw.items():
            if val == "":
                row[key] = None
            elif key == "phase":
                row[key] = val
            elif key in ("round", "n_selected", "skipped") or key.startswith(("accepted_", "beta_")):
                row[key] = int(val)
            else:
                row[key] = float(val)
        rows.append(row)
    return rows


def _attack_rounds(report: RunReport) -> list[RoundRecord]:
    return [r for r in report.records if r.phase == "attack"]


def evasion_rate(report: RunReport) -> float | None:
    """Share of attack-phase rounds in which every attacker was accepted."""
    rounds = _attack_rounds(report)
    if not rounds or not report.attacker_ids:
        return None
    return float(np.mean([all(r.accepted.get(j, False) for j in report.attacker_ids) for r in rounds]))


def benign_degradation(report: RunReport, baseline: RunReport | None) -> float | None:
    """Drop in final mean benign local accuracy relative to a no-attack run.

    Both runs are compared on the identities that are benign in ``report``.
    """
    if baseline is None or not report.records or not baseline.records:
        return None
    ids = report.benign_ids
    final, ref = report.records[-1], baseline.records[-1]
    return float(np.mean([ref.local_accuracy[i] for i in ids]) - np.mean([final.local_accuracy[i] for i in ids]))


def summarize(report: RunReport, baseline: RunReport | None = None) -> dict:
    attack = _attack_rounds(report)
    learning = [r for r in report.records if r.phase != "attack"]
    final_acc = report.records[-1].global_accuracy if report.records else report.initial_accuracy
    return {
        "seed": report.seed,
        "rounds": len(report.records),
        "certificate": report.certificate,
        "initial_accuracy": report.initial_accuracy,
        "final_accuracy": final_acc,
        "final_asr": report.records[-1].asr if report.records else report.initial_asr,
        "peak_asr": max((r.asr for r in attack), default=None),
        "learning_phase_mean_asr": float(np.mean([r.asr for r in learning])) if learning else None,
        "learning_phase_max_asr": max((r.asr for r in learning), default=None),
        "evasion_rate": evasion_rate(report),
        "benign_degradation": benign_degradation(report, baseline),
        "baseline_final_accuracy": baseline.records[-1].global_accuracy if baseline and baseline.records else None,
    }


def _clean(obj):
    # JSON has no inf/nan; store them as strings so the file stays standard
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _unclean(obj):
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _unclean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unclean(v) for v in obj]
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_summary(report: RunReport, path, baseline: RunReport | None = None) -> Path:
    """Summary JSON: final accuracy, peak ASR, evasion rate, benign degradation."""
    return _write(path, _dumps(summarize(report, baseline)))


def report_to_dict(report: RunReport) -> dict:
    return {
        "seed": report.seed,
        "certificate": report.certificate,
        "initial_accuracy": report.initial_accuracy,
        "initial_asr": report.initial_asr,
        "records": [
            {
                "round": r.round, "phase": r.phase, "global_accuracy": r.global_accuracy, "asr": r.asr,
                "global_loss": r.global_loss,
                "scores": {str(k): v for k, v in r.scores.items()},
                "accepted": {str(k): v for k, v in r.accepted.items()},
                "local_accuracy": {str(k): v for k, v in r.local_accuracy.items()},
                "threshold": r.threshold, "lam": r.lam, "rho": r.rho, "beta": list(r.beta),
                "attacker_distance": r.attacker_distance, "skipped": r.skipped,
                "benign_ids": list(r.benign_ids),
            }
            for r in report.records
        ],
    }


def report_from_dict(data: dict, config: ExperimentConfig) -> RunReport:
    data = _unclean(data)
    recs = []
    for r in data["records"]:
        recs.append(RoundRecord(
            round=r["round"], phase=r["phase"], global_accuracy=r["global_accuracy"], asr=r["asr"],
            global_loss=r["global_loss"],
            scores={int(k): v for k, v in r["scores"].items()},
            accepted={int(k): v for k, v in r["accepted"].items()},
            local_accuracy={int(k): v for k, v in r["local_accuracy"].items()},
            threshold=r["threshold"], lam=r["lam"], rho=r["rho"], beta=list(r["beta"]),
            attacker_distance=r["attacker_distance"], skipped=r["skipped"],
            benign_ids=tuple(r["benign_ids"]),
        ))
    return RunReport(config, data["seed"], data["certificate"], data["initial_accuracy"], data["initial_asr"], recs)


def emit_report(reports: list[RunReport], path, baselines: list[RunReport] | None = None) -> Path:
    """Full machine-readable report: config echo plus every repeat's records."""
    if not reports:
        raise InputError("no reports to write")
    doc = {
        "config": reports[0].config.to_dict(),
        "repeats": [report_to_dict(r) for r in reports],
        "baselines": [report_to_dict(b) for b in baselines] if baselines else [],
    }
    return _write(path, _dumps(doc))


def load_report(path) -> tuple[list[RunReport], list[RunReport]]:
    """Read an emitted report file (or the run directory holding ``report.json``)."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    if not path.is_file():
        raise InputError(f"report not found: {path}")
    try:
        doc = json.loads(path.read_text())
        cfg = config_from_dict(doc["config"])
        reports = [report_from_dict(r, cfg.with_overrides(seed=r["seed"])) for r in doc["repeats"]]
        base_cfg = cfg.with_overrides(attackers=0)
        baselines = [report_from_dict(b, base_cfg.with_overrides(seed=b["seed"])) for b in doc.get("baselines", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed report ({exc})") from None
    return reports, baselines


def _series_fig3(rep: RunReport) -> dict[str, list[float]]:
    return {
        "global_accuracy": [r.global_accuracy for r in rep.records],
        "asr": [r.asr for r in rep.records],
    }


def _series_fig4(rep: RunReport) -> dict[str, list[float]]:
    out = {f"similarity_{i}": [r.scores.get(i, math.nan) for r in rep.records] for i in range(rep.config.agents)}
    out["threshold"] = [math.nan if r.threshold is None else r.threshold for r in rep.records]
    return out


def _series_local(rep: RunReport) -> dict[str, list[float]]:
    out = {
        f"local_accuracy_{i}": [r.local_accuracy.get(i, math.nan) for r in rep.records]
        for i in range(rep.config.agents)
    }
    out["mean_benign_local_accuracy"] = [r.mean_benign_local_accuracy for r in rep.records]
    out["global_accuracy"] = [r.global_accuracy for r in rep.records]
    return out


_SERIES = {"fig3": _series_fig3, "fig4": _series_fig4, "fig5": _series_local, "fig6": _series_local}


def plot_series(reports: list[RunReport], figure: str, baselines: list[RunReport] | None = None) -> dict[str, list]:
    """x/y series for one figure analog.

    ``fig3``: global accuracy and ASR per round.  ``fig4``: one similarity
    series per agent plus the filter threshold.  ``fig5``: per-agent local
    accuracy without attackers (taken from the baselines when the report
    has attackers).  ``fig6``: per-agent local accuracy under attack.
    With several repeats every series gets an ``_r<k>`` suffix per repeat
    plus a ``_mean`` series.
    """
    if figure not in FIGURES:
        raise InputError(f"unknown figure id {figure!r}; expected one of {', '.join(FIGURES)}")
    source = reports
    if figure == "fig5" and reports and reports[0].attacker_ids:
        if not baselines:
            raise InputError("fig5 needs a no-attack run; rerun with attackers: 0 or keep the baseline")
        source = baselines
    if not source:
        raise InputError("report holds no runs")
    per = [_SERIES[figure](rep) for rep in source]
    rounds = [r.round for r in source[0].records]
    out: dict[str, list] = {"round": rounds}
    if len(per) == 1:
        out.update(per[0])
        return out
    for name in per[0]:
        stacked = np.array([p[name] for p in per], dtype=np.float64)
        for k, row in enumerate(stacked):
            out[f"{name}_r{k}"] = row.tolist()
        out[f"{name}_mean"] = stacked.mean(axis=0).tolist() if len(rounds) else []
    return out


def emit_plot_data(reports: list[RunReport], figure: str, path, baselines=None) -> Path:
    series = plot_series(reports, figure, baselines)
    names = list(series)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for i in range(len(series["round"])):
        writer.writerow([_fmt(series[n][i]) for n in names])
    return _write(path, buf.getvalue())
