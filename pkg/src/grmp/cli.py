"""Command-line entry points: ``run``, ``verify`` and ``emit-plot-data``.

Failures exit non-zero and print one line on stderr::

    error: <kind>: <reason>

where ``kind`` is ``config``, ``input``, ``experiment`` or ``io``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import dump_config, load_config, resolve_output_dir
from .dataset import generate_synthetic, write_manifest
from .engine import DATA_STREAM, run_experiment
from .errors import ConfigError, ExperimentError, IngestionError, InputError
from .metrics import FIGURES, emit_csv, emit_plot_data, emit_report, load_report, summarize, _dumps, _write
from .numerics import rng_stream
from .verify import run_checks

EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_EXPERIMENT = 3
EXIT_IO = 4


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _run_one(cfg, out: Path, baseline: bool, repeat: int):
    ds = generate_synthetic(cfg.dataset, rng_stream(cfg.seed, DATA_STREAM))
    suffix = "" if cfg.repeats == 1 else f"_r{repeat}"
    write_manifest(ds, out / f"dataset_manifest{suffix}.json", cfg.dataset, cfg.seed)
    report = run_experiment(cfg, dataset=ds, snapshot_dir=out)
    base = None
    if baseline and cfg.attackers:
        base = run_experiment(cfg.with_overrides(attackers=0), dataset=ds)
    emit_csv(report, out / f"rounds{suffix}.csv")
    return report, base


def cmd_run(args) -> int:
    path = args.config or args.config_pos
    if not path:
        raise CliError("config", "no config given (pass a path or --config)", EXIT_USAGE)
    cfg = load_config(path)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    out = resolve_output_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.yaml", dump_config(cfg))

    reports, baselines = [], []
    for r in range(cfg.repeats):
        rep, base = _run_one(cfg.with_overrides(seed=cfg.seed + r), out, not args.no_baseline, r)
        reports.append(rep)
        if base is not None:
            baselines.append(base)
    emit_report(reports, out / "report.json", baselines)

    per = [summarize(rep, baselines[i] if baselines else None) for i, rep in enumerate(reports)]
    if len(per) == 1:
        summary = per[0]
    else:
        mean = {}
        for key in per[0]:
            vals = [p[key] for p in per]
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
                mean[key] = float(np.mean(vals))
        summary = {"repeats": per, "mean": mean}
    _write(out / "summary.json", _dumps(summary))
    print(f"run: ok out={out} repeats={cfg.repeats}")
    return 0


def cmd_verify(args) -> int:
    results = run_checks(args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"verify: FAIL {len(failed)}/{len(results)} ({', '.join(failed)})")
        return EXIT_VERIFY
    print(f"verify: PASS {len(results)}/{len(results)}")
    return 0


def cmd_emit(args) -> int:
    reports, baselines = load_report(args.report)
    src = Path(args.report)
    default_dir = src if src.is_dir() else src.parent
    target = Path(args.out) if args.out else default_dir / f"plot_{args.figure}.csv"
    emit_plot_data(reports, args.figure, target, baselines)
    print(f"emit-plot-data: ok figure={args.figure} path={target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grmp", description="Federated poisoning simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a YAML config")
    run.add_argument("config_pos", nargs="?", metavar="CONFIG")
    run.add_argument("--config", help="YAML config path")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", help="output directory (beats GRMP_OUTPUT_DIR and the config)")
    run.add_argument("--no-baseline", action="store_true",
                     help="skip the matching no-attack run used for benign degradation")
    run.set_defaults(fn=cmd_run)

    ver = sub.add_parser("verify", help="run the invariant and oracle checks")
    ver.add_argument("--seed", type=int, default=0)
    ver.set_defaults(fn=cmd_verify)

    emit = sub.add_parser("emit-plot-data", help="write x/y series for one figure analog")
    emit.add_argument("report", help="report.json or the run directory holding it")
    emit.add_argument("figure", choices=FIGURES)
    emit.add_argument("--out", help="CSV path (default: plot_<figure>.csv next to the report)")
    emit.set_defaults(fn=cmd_emit)
    return p


def _one_line(msg) -> str:
    return " ".join(str(msg).split())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except CliError as exc:
        kind, code, msg = exc.kind, exc.code, str(exc)
    except ConfigError as exc:
        kind, code, msg = "config", EXIT_USAGE, str(exc)
    except (InputError, IngestionError) as exc:
        kind, code, msg = "input", EXIT_USAGE, str(exc)
    except ExperimentError as exc:
        where = f" snapshot={exc.snapshot_path}" if exc.snapshot_path else ""
        kind, code, msg = "experiment", EXIT_EXPERIMENT, f"{exc}{where}"
    except OSError as exc:
        kind, code, msg = "io", EXIT_IO, str(exc)
    print(f"error: {kind}: {_one_line(msg)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
