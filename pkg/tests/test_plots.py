import importlib.util
import json
from pathlib import Path

import pytest

from mobility.data.loader import chronological_split
from mobility.metrics.baseline import FrequencyBaseline
from mobility.training.evaluate import evaluate_predictor

SCRIPT = Path(__file__).parent.parent / 'scripts' / 'plot_breakdown.py'


@pytest.fixture(scope='module')
def plot_script():
    spec = importlib.util.spec_from_file_location('plot_breakdown', SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def test_plots_written(plot_script, small_dataset, grid, tmp_path):
    splits = chronological_split(small_dataset.trajectories, grid=grid)
    report = evaluate_predictor(FrequencyBaseline().fit(splits.train), splits.test, grid)
    report_path = tmp_path / 'report.json'
    report.save(report_path)

    metrics_path = tmp_path / 'metrics.jsonl'
    records = [{'step': 1, 'epoch': 0, 'loss': 4.2}, {'step': 2, 'epoch': 0, 'loss': 3.9},
               {'epoch': 0, 'val': {'acc@1': 0.25, 'mrr': 0.4}}]
    metrics_path.write_text('\n'.join(json.dumps(r) for r in records) + '\n')

    out = tmp_path / 'figures'
    assert plot_script.main([str(report_path), '--metrics', str(metrics_path), '--out', str(out)]) == 0
    assert (out / 'frequency_test_breakdown.png').stat().st_size > 0
    assert (out / 'training_curves.png').stat().st_size > 0
