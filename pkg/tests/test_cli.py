import json

import pandas as pd
import pytest

from conftest import tiny_train_config
from mobility.config import Config
from mobility.main import COMMANDS, main
from mobility.semantic.cache import PromptEmbeddingCache

HELP_FLAGS = {
    'generate': ['--users', '--days', '--noise', '--dropout', '--seed', '--grid', '--out'],
    'prompts': ['--data', '--out', '--dim', '--seed', '--grid', '--embedder', '--dump-prompts'],
    'train': ['--config', '--data', '--out', '--seed', '--grid', '--epochs', '--checkpoint', '--embedder',
              '--backbone', '--no-ha', '--no-token', '--no-traj-info', '--no-task-desc'],
    'eval': ['--checkpoint', '--data', '--split', '--out', '--embedder', '--smoothing'],
    'baseline': ['--data', '--split', '--grid', '--config', '--out', '--seed'],
    'gradcheck': ['--dim', '--seed', '--grid', '--users'],
    'report': ['--out'],
}


@pytest.mark.parametrize('command', sorted(COMMANDS))
def test_help(command, capsys):
    with pytest.raises(SystemExit) as info:
        main([command, '--help'])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for flag in HELP_FLAGS[command]:
        assert flag in out


def test_top_level_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        main(['--help'])
    out = capsys.readouterr().out
    for command in COMMANDS:
        assert command in out


@pytest.mark.parametrize('argv', [
    [],
    ['fly'],
    ['generate'],
    ['generate', '--out', 'x', '--grid', 'ten'],
    ['train', '--bogus'],
    ['eval', '--checkpoint', 'x.ckpt', '--split', 'dev'],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert 'error:' in capsys.readouterr().err


def test_train_without_data_is_usage_error():
    assert main(['train', '--epochs', '1']) == 1


def test_runtime_errors_exit_2(tmp_path):
    assert main(['eval', '--checkpoint', str(tmp_path / 'missing.ckpt')]) == 2
    assert main(['generate', '--out', str(tmp_path), '--noise', '2']) == 2
    assert main(['report', str(tmp_path / 'missing.json')]) == 2


def test_gradcheck_passes(capsys):
    assert main(['gradcheck']) == 0
    assert 'max relative error' in capsys.readouterr().out


def test_full_pipeline(tmp_path, capsys):
    data_dir = tmp_path / 'data'
    assert main(['generate', '--users', '3', '--days', '14', '--noise', '0', '--dropout', '0',
                 '--grid', '10x10', '--seed', '1', '--out', str(data_dir)]) == 0
    csv_path = data_dir / 'trajectories.csv'
    assert csv_path.exists()
    assert (data_dir / 'trajectories.routines.json').exists()

    cache_path = tmp_path / 'prompts.bin'
    assert main(['prompts', '--data', str(csv_path), '--out', str(cache_path), '--dim', '16',
                 '--grid', '10x10', '--dump-prompts', str(tmp_path / 'dump')]) == 0
    # 3 users x 14 history days + 3 users x 7 target days
    assert len(PromptEmbeddingCache.load(cache_path)) == 63
    assert len(list((tmp_path / 'dump').glob('*.txt'))) == 63

    config_path = tmp_path / 'config.json'
    tiny_train_config(epochs=1, data=str(csv_path)).save(config_path)
    ckpt_dir = tmp_path / 'ckpt'
    assert main(['train', '--config', str(config_path), '--out', str(ckpt_dir),
                 '--embedder', f'cache:{cache_path}']) == 0
    assert (ckpt_dir / 'best.ckpt').exists()
    assert (ckpt_dir / 'metrics.jsonl').exists()
    saved = json.loads((ckpt_dir / 'config.json').read_text())
    assert saved['embedder'] == f'cache:{cache_path}'

    report_path = tmp_path / 'reports' / 'test.json'
    assert main(['eval', '--checkpoint', str(ckpt_dir / 'best.ckpt'), '--out', str(report_path),
                 '--smoothing', 'epsilon']) == 0
    report = json.loads(report_path.read_text())
    assert set(report['metrics']) == {'acc@1', 'acc@3', 'acc@5', 'mrr', 'dtw', 'bleu'}
    assert report['split'] == 'test'
    assert report['samples'] == 9
    assert report['bleu_smoothing'] == 'epsilon'
    assert len(report['breakdown']['by_slot']) == 48

    tables = tmp_path / 'tables'
    assert main(['report', str(report_path), '--out', str(tables)]) == 0
    assert 'acc@1' in capsys.readouterr().out
    assert len(pd.read_csv(tables / 'by_slot.csv')) == 48
    assert len(pd.read_csv(tables / 'by_dow.csv')) == 7
    assert list(pd.read_csv(tables / 'global_metrics.csv')['metric'])[:2] == ['acc@1', 'acc@3']

    baseline_path = tmp_path / 'reports' / 'baseline.json'
    assert main(['baseline', '--data', str(csv_path), '--grid', '10x10', '--out', str(baseline_path)]) == 0
    baseline = json.loads(baseline_path.read_text())
    assert baseline['predictor'] == 'frequency'
    assert baseline['metrics']['acc@1'] == 1.0
    assert baseline['data_fingerprint'] == report['data_fingerprint']


def test_train_resume_from_checkpoint(tmp_path, capsys):
    assert main(['generate', '--users', '2', '--days', '14', '--grid', '10x10', '--out', str(tmp_path)]) == 0
    config_path = tmp_path / 'config.json'
    tiny_train_config(epochs=1, data=str(tmp_path / 'trajectories.csv')).save(config_path)
    assert main(['train', '--config', str(config_path), '--out', str(tmp_path / 'a')]) == 0
    assert 's per epoch' in capsys.readouterr().out
    assert main(['train', '--config', str(config_path), '--out', str(tmp_path / 'a'), '--epochs', '2',
                 '--checkpoint', str(tmp_path / 'a' / 'last.ckpt')]) == 0
    lines = (tmp_path / 'a' / 'metrics.jsonl').read_text().splitlines()
    assert sum('"val"' in line for line in lines) == 2
    epochs = [json.loads(line) for line in lines if '"val"' in line]
    assert all(r['epoch_seconds'] > 0 for r in epochs)


def test_default_outputs_go_under_results_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(Config, 'CHECKPOINT_DIR', tmp_path / 'results' / 'checkpoints')
    monkeypatch.setattr(Config, 'REPORTS_DIR', tmp_path / 'results' / 'reports')
    monkeypatch.setattr(Config, 'LOGS_DIR', tmp_path / 'logs')
    assert main(['generate', '--users', '2', '--days', '14', '--grid', '10x10', '--out', str(tmp_path)]) == 0

    assert main(['baseline', '--data', str(tmp_path / 'trajectories.csv'), '--grid', '10x10']) == 0
    assert (tmp_path / 'results' / 'reports' / 'baseline_test_report.json').exists()
    assert (tmp_path / 'results' / 'checkpoints').is_dir()
    assert (tmp_path / 'logs').is_dir()
