#!/usr/bin/env python3
"""
Figures for an evaluation report and a training run
Usage: python scripts/plot_breakdown.py reports/test_report.json [--metrics checkpoints/metrics.jsonl] [--out figures]
"""
import argparse
import json
import sys
from pathlib import Path

import matplotlib as mpl
mpl.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

sys.path.insert(0, str(Path(__file__).parent.parent))
from mobility.config import Config
from mobility.core.result import PredictionReport


def plot_breakdown(report: PredictionReport, out_dir: Path) -> Path:
    """acc@1 per time slot and per day of week, side by side"""
    slots = report.breakdown.slot_frame().dropna(subset=['acc@1']).astype({'acc@1': float})
    days = report.breakdown.dow_frame().fillna({'acc@1': 0.0}).astype({'acc@1': float})

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(13, 4), gridspec_kw={'width_ratios': [3, 1]})
    sns.lineplot(data=slots, x='slot', y='acc@1', marker='o', ax=ax1)
    ax1.set_title(f"{report.predictor}: acc@1 by time slot ({report.split})")
    ax1.set_xlabel('slot (30 min)')
    ax1.set_xlim(0, 47)
    ax1.set_ylim(0, 1)
    ax1.grid(True)

    sns.barplot(data=days, x='weekday', y='acc@1', color='steelblue', ax=ax2)
    ax2.set_title('acc@1 by day of week')
    ax2.set_xlabel('')
    ax2.set_ylim(0, 1)
    ax2.tick_params(axis='x', rotation=45)

    fig.tight_layout()
    out = out_dir / f'{report.predictor}_{report.split}_breakdown.png'
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_training(metrics_path: Path, out_dir: Path) -> Path:
    """Per-step loss and per-epoch validation acc@1 from metrics.jsonl"""
    with open(metrics_path, encoding='utf-8') as f:
        records = [json.loads(line) for line in f if line.strip()]
    steps = pd.DataFrame([r for r in records if 'step' in r])
    epochs = pd.DataFrame([{'epoch': r['epoch'] + 1, **r['val']} for r in records if r.get('val')])

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    if not steps.empty:
        sns.lineplot(data=steps, x='step', y='loss', ax=ax1)
    ax1.set_title('training loss')
    ax1.grid(True)
    if not epochs.empty:
        sns.lineplot(data=epochs, x='epoch', y='acc@1', marker='o', ax=ax2)
    ax2.set_title('validation acc@1')
    ax2.grid(True)

    fig.tight_layout()
    out = out_dir / 'training_curves.png'
    fig.savefig(out)
    plt.close(fig)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description='Plot report breakdowns and training curves')
    parser.add_argument('report', help='Report JSON written by eval or baseline')
    parser.add_argument('--metrics', help='metrics.jsonl written by train')
    parser.add_argument('--out', help=f'Figure directory (default {Config.REPORTS_DIR})')
    args = parser.parse_args(argv)

    out_dir = Path(args.out) if args.out else Config.REPORTS_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    sns.set_theme(style='whitegrid')

    print(f"saved {plot_breakdown(PredictionReport.load(args.report), out_dir)}")
    if args.metrics:
        print(f"saved {plot_training(Path(args.metrics), out_dir)}")
    return 0


if __name__ == '__main__':
    exit(main())
