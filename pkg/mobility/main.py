#!/usr/bin/env python3
"""Mobility prediction CLI"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from mobility.config import Config, TrainConfig
from mobility.core.result import METRIC_KEYS, PredictionReport
from mobility.core.trajectory import GridSpec, trajectories_summary
from mobility.data.loader import DatasetSplits, chronological_split, parse_trajectory_csv
from mobility.data.synthetic import DEFAULT_DROPOUT, generate_synthetic, routine_accuracy, write_synthetic
from mobility.errors import MobilityError, UsageError
from mobility.metrics.baseline import FrequencyBaseline
from mobility.semantic import EmbedderSpec, get_embedder
from mobility.semantic.cache import SemanticContext, precompute_cache
from mobility.semantic.stub import StubEmbedder
from mobility.training.checkpoint import Checkpoint, restore_model
from mobility.training.evaluate import evaluate, evaluate_predictor
from mobility.training.gradcheck import run_gradcheck
from mobility.training.trainer import Trainer
from mobility.utils.logger import setup_logger

logger = setup_logger('mobility')


class ArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _grid(text: str) -> GridSpec:
    try:
        return GridSpec.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog='mobility',
        description='Train and evaluate hierarchical-token mobility predictors',
    )
    sub = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    gen = sub.add_parser('generate', help='Write a synthetic routine dataset')
    gen.add_argument('--users', type=int, default=20, help='Number of users')
    gen.add_argument('--days', type=int, default=30, help='Days per user (>= 8)')
    gen.add_argument('--noise', type=float, default=0.0, help='Per-slot neighbour replacement probability')
    gen.add_argument('--dropout', type=float, default=DEFAULT_DROPOUT, help='Per-slot observation dropout')
    gen.add_argument('--seed', type=int, default=0, help='Random seed')
    gen.add_argument('--grid', type=_grid, default=GridSpec(), help='Grid size WxH (default 200x200)')
    gen.add_argument('--out', required=True, help='Output directory')

    prompts = sub.add_parser('prompts', help='Pre-compute the prompt embedding cache')
    prompts.add_argument('--data', required=True, help='Trajectory CSV (uid,d,t,x,y)')
    prompts.add_argument('--out', required=True, help='Cache file to write')
    prompts.add_argument('--dim', type=int, default=64, help='Embedding width (model d_model)')
    prompts.add_argument('--seed', type=int, default=0, help='Stub embedder seed')
    prompts.add_argument('--grid', type=_grid, default=GridSpec(), help='Grid size WxH')
    prompts.add_argument('--embedder', default='stub', help='Producer: stub')
    prompts.add_argument('--dump-prompts', metavar='DIR', help='Also write each prompt as <digest>.txt')

    train = sub.add_parser('train', help='Train a model')
    train.add_argument('--config', help='TrainConfig JSON file')
    train.add_argument('--data', help='Trajectory CSV (overrides config)')
    train.add_argument('--out', help=f'Checkpoint directory (default {Config.CHECKPOINT_DIR})')
    train.add_argument('--seed', type=int, help='Random seed')
    train.add_argument('--grid', type=_grid, help='Grid size WxH')
    train.add_argument('--epochs', type=int, help='Number of epochs')
    train.add_argument('--checkpoint', help='Resume from this checkpoint')
    train.add_argument('--embedder', help='stub or cache:PATH')
    train.add_argument('--backbone', help='identity, frozen-random:L:H or load:PATH')
    train.add_argument('--no-ha', action='store_true', help='Disable intra/inter segment attention')
    train.add_argument('--no-token', action='store_true', help='Feed raw slots to the backbone')
    train.add_argument('--no-traj-info', action='store_true', help='Drop history prompt embeddings')
    train.add_argument('--no-task-desc', action='store_true', help='Drop task prompt embedding')

    ev = sub.add_parser('eval', help='Evaluate a checkpoint on a split')
    ev.add_argument('--checkpoint', required=True, help='Checkpoint file')
    ev.add_argument('--data', help='Trajectory CSV (default: the one used for training)')
    ev.add_argument('--split', choices=('train', 'val', 'test'), default='test', help='Split to score')
    ev.add_argument('--out', help='Report JSON path')
    ev.add_argument('--embedder', help='Override the embedder recorded in the checkpoint')
    ev.add_argument('--smoothing', choices=('none', 'epsilon', 'add-one'), default='none', help='BLEU smoothing')

    base = sub.add_parser('baseline', help='Evaluate the frequency baseline')
    base.add_argument('--data', required=True, help='Trajectory CSV')
    base.add_argument('--split', choices=('train', 'val', 'test'), default='test', help='Split to score')
    base.add_argument('--grid', type=_grid, default=GridSpec(), help='Grid size WxH')
    base.add_argument('--config', help='TrainConfig JSON (split ratios)')
    base.add_argument('--out', help='Report JSON path')
    base.add_argument('--seed', type=int, default=0, help='Unused; accepted for symmetry')

    grad = sub.add_parser('gradcheck', help='End-to-end finite-difference gradient check')
    grad.add_argument('--dim', type=int, default=16, help='Model width')
    grad.add_argument('--seed', type=int, default=0, help='Random seed')
    grad.add_argument('--grid', type=_grid, default=GridSpec(10, 10), help='Grid size WxH')
    grad.add_argument('--users', type=int, default=2, help='Synthetic users')

    rep = sub.add_parser('report', help='Summarise a report JSON and export CSV tables')
    rep.add_argument('report', help='Report JSON written by eval or baseline')
    rep.add_argument('--out', help='Directory for CSV tables (default: next to the report)')

    return parser


def load_splits(path: str | Path, grid: GridSpec, ratios) -> DatasetSplits:
    trajectories = parse_trajectory_csv(path, grid)
    summary = trajectories_summary(trajectories)
    splits = chronological_split(trajectories, tuple(ratios), grid)
    logger.info(f"Loaded {summary['users']} users, {summary['observations']} observations, {summary['days']} days")
    logger.info(f"Splits: {json.dumps(splits.summary())}")
    return splits


def resolve_train_config(args) -> TrainConfig:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.data:
        config.data = args.data
    if args.grid:
        config.model.grid_width, config.model.grid_height = args.grid.width, args.grid.height
    if args.epochs:
        config.epochs = args.epochs
    if args.embedder:
        config.embedder = args.embedder
    if args.backbone:
        config.backbone = args.backbone
    config.no_hierarchical_attention |= args.no_ha
    config.no_tokenization |= args.no_token
    config.no_traj_info |= args.no_traj_info
    config.no_task_desc |= args.no_task_desc
    if not config.data:
        raise UsageError("train needs --data or a config with a data path")
    return config


def cmd_generate(args) -> int:
    dataset = generate_synthetic(args.users, args.days, args.noise, args.seed, args.grid, args.dropout)
    csv_path, sidecar_path = write_synthetic(dataset, args.out)
    match = routine_accuracy(dataset.trajectories, dataset.routines, dataset.grid)
    logger.info(f"Routine match rate {match:.4f} over observed slots")
    print(f"wrote {csv_path} and {sidecar_path}")
    return 0


def cmd_prompts(args) -> int:
    if args.embedder != 'stub':
        raise UsageError("prompts can only produce embeddings with the stub embedder")
    trajectories = parse_trajectory_csv(args.data, args.grid)
    cache = precompute_cache(trajectories, StubEmbedder(args.dim, args.seed), args.out, args.grid,
                             dump_dir=args.dump_prompts)
    print(f"cached {len(cache)} prompt embeddings to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = resolve_train_config(args)
    grid = GridSpec(config.model.grid_width, config.model.grid_height)
    logger.info(f"Resolved config (seed {config.seed}): {json.dumps(config.to_dict(), sort_keys=True)}")

    if not args.out:
        Config.ensure_directories()
    out_dir = Path(args.out) if args.out else Config.CHECKPOINT_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / 'config.json')

    splits = load_splits(config.data, grid, config.split_ratios)
    embedder = get_embedder(EmbedderSpec.parse(config.embedder, seed=config.seed), config.model.d_model)
    trainer = Trainer(config, splits, SemanticContext(embedder, grid), out_dir)
    resume = Checkpoint.load(args.checkpoint) if args.checkpoint else None
    result = trainer.train(resume)

    if result.backbone_checksum_before != result.backbone_checksum_after:
        raise MobilityError("backbone parameters changed during training")
    seconds = result.epoch_seconds
    if seconds:
        print(f"trained {len(seconds)} epochs in {sum(seconds):.1f}s ({sum(seconds) / len(seconds):.2f}s per epoch)")
    print(f"best val acc@1 {result.best.best_val_acc1:.4f} (epoch {result.best.best_epoch + 1}); "
          f"checkpoints in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    config = checkpoint.config
    if args.embedder:
        config.embedder = args.embedder
    logger.info(f"Resolved config (seed {config.seed}): {json.dumps(config.to_dict(), sort_keys=True)}")

    data = args.data or config.data
    if not data:
        raise UsageError("eval needs --data (checkpoint config has no data path)")
    model = restore_model(checkpoint)
    splits = load_splits(data, model.grid, config.split_ratios)
    embedder = get_embedder(EmbedderSpec.parse(config.embedder, seed=config.seed), config.model.d_model)
    report = evaluate(model, SemanticContext(embedder, model.grid), splits.get(args.split), args.split,
                      args.smoothing, config.to_dict())

    if not args.out:
        Config.ensure_directories()
    out = Path(args.out) if args.out else Config.REPORTS_DIR / f'{args.split}_report.json'
    report.save(out)
    for line in report.summary_lines():
        print(line)
    print(f"report saved to {out}")
    return 0


def cmd_baseline(args) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    splits = load_splits(args.data, args.grid, config.split_ratios)
    baseline = FrequencyBaseline().fit(splits.train)
    report = evaluate_predictor(baseline, splits.get(args.split), args.grid, args.split,
                                config.model.top_k, config={'predictor': 'frequency', 'data': args.data})

    if not args.out:
        Config.ensure_directories()
    out = Path(args.out) if args.out else Config.REPORTS_DIR / f'baseline_{args.split}_report.json'
    report.save(out)
    for line in report.summary_lines():
        print(line)
    print(f"report saved to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(args.dim, args.grid, args.users, args.seed)
    logger.info(f"Checked {len(result.errors)} tensors ({result.parameters} parameters) in {result.elapsed:.1f}s")
    print(f"max relative error {result.max_error:.3e} (worst: {result.worst})")
    print(f"backbone unchanged after update: {result.backbone_unchanged}; "
          f"frozen tensors in optimizer: {result.frozen_in_optimizer}")
    return 0 if result.passed(Config.GRADCHECK_TOLERANCE) else 2


def cmd_report(args) -> int:
    report = PredictionReport.load(args.report)
    for line in report.summary_lines():
        print(line)

    out_dir = Path(args.out) if args.out else Path(args.report).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([{'metric': k, 'value': report.metrics[k]} for k in METRIC_KEYS if k in report.metrics]) \
        .to_csv(out_dir / 'global_metrics.csv', index=False)
    report.breakdown.slot_frame().to_csv(out_dir / 'by_slot.csv', index=False)
    report.breakdown.dow_frame().to_csv(out_dir / 'by_dow.csv', index=False)
    print(f"tables exported to {out_dir}")
    return 0


COMMANDS = {
    'generate': cmd_generate,
    'prompts': cmd_prompts,
    'train': cmd_train,
    'eval': cmd_eval,
    'baseline': cmd_baseline,
    'gradcheck': cmd_gradcheck,
    'report': cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logger.info(f"Running {args.command} (seed {getattr(args, 'seed', None)})")
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (MobilityError, OSError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2


if __name__ == '__main__':
    exit(main())
