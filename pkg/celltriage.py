#!/usr/bin/env python
"""
celltriage: classify 4G cells as throughput-problematic or normal.

Pipeline:
- generate: seeded synthetic telemetry with planted problematic cells
- preprocess / inspect-prior: preprocessing chain and prior-assumption view
- train: clustering block + network bundle from labeled telemetry
- evaluate / classify: score labeled test cells or classify new ones
- baseline: the global-mean threshold classifier
- split-study: effect of the training-set size over seeds

Usage:
    python celltriage.py generate --config configs/synth_default.json --out data/synth.csv
    python celltriage.py train --config configs/pipeline_default.json --out runs/synth
    python celltriage.py evaluate --config configs/pipeline_default.json --out runs/synth --plot

Exit codes: 0 success, 1 stage failure, 2 invalid arguments or config,
3 output directory locked by another run.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from tools.pipeline import (
    PipelineStageError,
    run_baseline,
    run_classify,
    run_evaluate,
    run_generate,
    run_inspect_prior,
    run_preprocess,
    run_split_study,
    run_train,
)
from tools.schemas import PipelineConfig, SynthConfig
from utils.run_lock import LockContentionError, RunLock

logger = logging.getLogger("celltriage")

EXIT_STAGE_ERROR = 1
EXIT_USAGE_ERROR = 2
EXIT_LOCKED = 3

NOISY_LIBRARIES = ("matplotlib", "matplotlib.font_manager", "joblib", "PIL")


def configure_logging(level: str, log_dir: Optional[Path]) -> None:
    """stderr always; celltriage.log inside the output directory when there is one."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_dir / "celltriage.log"))
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
    for lib_name in NOISY_LIBRARIES:
        lib_logger = logging.getLogger(lib_name)
        lib_logger.setLevel(logging.WARNING)
        lib_logger.propagate = False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="celltriage",
        description="Throughput-problematic cell classification pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, out_help: str) -> None:
        p.add_argument('--config', help='JSON config file')
        p.add_argument('--seed', type=int, help='Root seed (overrides the config)')
        p.add_argument('--out', help=out_help)
        p.add_argument(
            '--log-level',
            default='INFO',
            choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
            help='Logging level (default: INFO)'
        )

    p = sub.add_parser('generate', help='Generate synthetic labeled telemetry')
    add_common(p, 'Output telemetry CSV path')
    p.add_argument('--labels', help='Output labels CSV (default: <out stem>_labels.csv)')

    for name, text in (
        ('preprocess', 'Run the preprocessing chain and write normalized data'),
        ('inspect-prior', 'Show the cells selected by the prior assumption'),
        ('train', 'Train a classifier bundle'),
        ('evaluate', 'Evaluate the bundle on labeled test data'),
        ('classify', 'Classify unlabeled cells with the bundle'),
        ('baseline', 'Run the threshold baseline'),
        ('split-study', 'Compare train fractions over several seeds'),
    ):
        p = sub.add_parser(name, help=text)
        add_common(p, 'Output directory (overrides output_dir)')
        if name in ('preprocess', 'inspect-prior', 'classify', 'baseline'):
            p.add_argument('--data', help='Telemetry CSV (overrides the config)')
        if name == 'baseline':
            p.add_argument('--labels', help='Labels CSV for scoring the baseline')
        if name in ('inspect-prior', 'evaluate', 'baseline'):
            p.add_argument('--plot', action='store_true', help='Also write PNG figures')
        if name == 'evaluate':
            p.add_argument(
                '--allow-train-data',
                action='store_true',
                help='Permit evaluating on the training data (report is flagged)'
            )
        if name == 'split-study':
            p.add_argument('--fractions', type=float, nargs='+', default=[0.7, 0.9])
            p.add_argument('--n-seeds', type=int, default=10)
    return parser


def _read_json(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def load_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file, then CLI overrides, validated as one PipelineConfig."""
    data = _read_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["output_dir"] = args.out
    if getattr(args, "data", None) is not None:
        data["data_path"] = args.data
    return PipelineConfig.model_validate(data)


def run_command(args: argparse.Namespace) -> int:
    if args.command == 'generate':
        data = _read_json(args.config)
        if args.seed is not None:
            data["seed"] = args.seed
        synth_cfg = SynthConfig.model_validate(data)
        out = Path(args.out or "data/synth.csv")
        labels = Path(args.labels) if args.labels else out.with_name(f"{out.stem}_labels.csv")
        configure_logging(args.log_level, None)
        run_generate(synth_cfg, out, labels)
        return 0

    cfg = load_pipeline_config(args)
    out_dir = Path(cfg.output_dir)
    configure_logging(args.log_level, out_dir)
    logger.info(f"celltriage {args.command}: output {out_dir}, seed {cfg.seed}")

    with RunLock(out_dir):
        if args.command == 'preprocess':
            run_preprocess(cfg)
        elif args.command == 'inspect-prior':
            _, selected = run_inspect_prior(cfg, plot=args.plot)
            print(json.dumps({"assumed_problematic": sorted(selected)}))
        elif args.command == 'train':
            run_train(cfg)
        elif args.command == 'evaluate':
            report = run_evaluate(cfg, allow_train_data=args.allow_train_data, plot=args.plot)
            print(report.model_dump_json(indent=2))
        elif args.command == 'classify':
            run_classify(cfg)
        elif args.command == 'baseline':
            run_baseline(cfg, labels_path=args.labels, plot=args.plot)
        elif args.command == 'split-study':
            report = run_split_study(cfg, fractions=args.fractions, n_seeds=args.n_seeds)
            print(report.model_dump_json(indent=2))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        return run_command(args)
    except PipelineStageError as e:
        logger.error(f"{args.command} failed in stage {e.stage}: {e.args[0]}")
        print(f"error [{e.stage}]: {e.args[0]}", file=sys.stderr)
        return EXIT_STAGE_ERROR
    except LockContentionError as e:
        print(f"error [lock]: {e}", file=sys.stderr)
        return EXIT_LOCKED
    except (ValidationError, ValueError, OSError) as e:
        print(f"error [config]: {e}", file=sys.stderr)
        return EXIT_USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
