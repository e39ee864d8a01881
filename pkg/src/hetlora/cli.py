"""Command-line entry point: ``python -m hetlora --config run.cfg``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import TrainMode, build_config, read_config_values
from .errors import ConfigError, TrainingAborted
from .metrics import export_representations, write_config_snapshot, write_csv
from .protocol import run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetlora", description="Run a federated adapter experiment.")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int, help="override experiment.seed")
    p.add_argument("--mode", choices=[m.value for m in TrainMode], help="override experiment.mode")
    p.add_argument("--rounds", type=int, help="override experiment.rounds")
    p.add_argument("--out", help="override experiment.out_dir")
    p.add_argument("--workers", type=int, default=1, help="parallel client workers per round")
    p.add_argument("--export-reps", action="store_true", help="write per-client test representations")
    p.add_argument("--quiet", action="store_true")
    return p


def load_with_overrides(args):
    """Built-in defaults, then the config file, then command-line flags."""
    text = Path(args.config).read_text(encoding="utf-8")
    values, model_specs = read_config_values(text, args.config)
    if args.seed is not None:
        values["experiment.seed"] = args.seed
    if args.mode is not None:
        values["experiment.mode"] = TrainMode(args.mode)
    if args.rounds is not None:
        values["experiment.rounds"] = args.rounds
    if args.out is not None:
        values["experiment.out_dir"] = args.out
    return build_config(values, model_specs)


def _error(kind: str, message: str) -> None:
    one_line = " ".join(str(message).split())
    print(f"hetlora: error: {kind}: {one_line}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_with_overrides(args)
    except ConfigError as exc:
        _error("config", exc)
        return 1
    except OSError as exc:
        _error("io", exc)
        return 1
    if args.workers < 1:
        _error("config", f"--workers must be >= 1, got {args.workers}")
        return 1

    out = Path(cfg.out_dir)

    def progress(m):
        if not args.quiet:
            print(f"round {m.round:4d}  avg_accuracy {m.avg_accuracy:.4f}  "
                  f"comm {m.cum_comm_params}  flops {m.cum_flops}")

    status = 0
    try:
        out.mkdir(parents=True, exist_ok=True)
        log = run_experiment(cfg, workers=args.workers, progress=progress)
    except TrainingAborted as exc:
        log = exc.runlog
        _error("training", exc)
        status = 1
    except ConfigError as exc:
        _error("config", exc)
        return 1
    except OSError as exc:
        _error("io", exc)
        return 1
    try:
        write_csv(log, out / "metrics.csv")
        write_config_snapshot(log, out / "config.txt")
        if args.export_reps and log.clients:
            reps = out / "representations"
            reps.mkdir(exist_ok=True)
            for client in log.clients:
                export_representations(client, reps / f"client_{client.cid}.csv")
    except OSError as exc:
        _error("io", exc)
        return 1
    return status


if __name__ == "__main__":
    sys.exit(main())
