import signal

import numpy as np
import pytest

from onestep_sr.main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from onestep_sr.models.json_report import JSONReport
from onestep_sr.pipeline.checkpoint import load_checkpoint, save_checkpoint
from onestep_sr.pipeline.image_io import read_image, write_image
from onestep_sr.pipeline.runner import new_state
from onestep_sr.services.tensor_ops import Rng
from onestep_sr.start_modes.config_parser import RunConfigParser


@pytest.fixture(autouse=True)
def keep_sigint_handler():
    previous = signal.getsignal(signal.SIGINT)
    yield
    signal.signal(signal.SIGINT, previous)


@pytest.fixture
def checkpoint(tmp_path, tiny_settings) -> str:
    path = str(tmp_path / 'tiny.ckpt')
    save_checkpoint(path, new_state(tiny_settings), RunConfigParser.to_dict(tiny_settings))

    return path


def test_macs_report_goes_to_stdout(capsys):
    assert main(['macs', '--hw', '512x512']) == EXIT_OK

    report = JSONReport(capsys.readouterr().out.encode('utf-8'))
    assert report.kind == 'macs'
    assert report.payload['tokens'] == 256
    assert report.payload['total'] == sum(report.payload['components'].values())


def test_usage_errors_exit_with_one():
    assert main(['bogus']) == EXIT_USAGE
    assert main(['macs']) == EXIT_USAGE
    assert main(['macs', '--hw', 'wide']) == EXIT_USAGE
    assert main(['prune', '--ckpt', 'a.ckpt', '--out', 'b.ckpt', '--budget-ratio', '1.5']) == EXIT_USAGE
    assert main(['ablate', '--objectives', '--ckpt', 'a.ckpt']) == EXIT_USAGE


def test_runtime_failures_exit_with_two(tmp_path):
    assert main(['macs', '--hw', '500x500']) == EXIT_FAILURE
    assert main(['restore', '--ckpt', str(tmp_path / 'absent.ckpt'), '--in', 'x.ppm', '--out', 'y.ppm']) \
        == EXIT_FAILURE


def test_restore_upscales_with_one_evaluation(tmp_path, checkpoint):
    source, target = str(tmp_path / 'small.raw'), str(tmp_path / 'large.ppm')
    write_image(source, Rng(3).uniform((3, 10, 12)).astype(np.float32))

    assert main(['restore', '--ckpt', checkpoint, '--in', source, '--out', target]) == EXIT_OK

    restored = read_image(target)
    assert restored.shape == (3, 40, 48)
    assert restored.min() >= 0.0 and restored.max() <= 1.0


def test_restore_without_ema_adapters_fails(tmp_path, checkpoint):
    source = str(tmp_path / 'small.raw')
    write_image(source, np.zeros((3, 8, 8), dtype=np.float32))

    assert main(['restore', '--ckpt', checkpoint, '--in', source, '--out', str(tmp_path / 'out.raw'),
                 '--ema']) == EXIT_FAILURE


def test_prune_with_the_full_budget_keeps_every_block(tmp_path, checkpoint):
    pruned, report_path = str(tmp_path / 'pruned.ckpt'), tmp_path / 'prune.json'

    assert main(['prune', '--ckpt', checkpoint, '--budget-ratio', '1.0', '--calib-steps', '1',
                 '--out', pruned, '--report', str(report_path)]) == EXIT_OK

    report = JSONReport(report_path.read_bytes())
    assert report.payload['report']['kept'] == [1, 2, 3]
    assert report.payload['validation']['passed']
    assert load_checkpoint(pruned).state.kept_blocks == (1, 2, 3)


@pytest.mark.slow
def test_selftest_passes(tmp_path):
    report_path = tmp_path / 'selftest.json'

    assert main(['selftest', '--out', str(report_path)]) == EXIT_OK
    assert JSONReport(report_path.read_bytes()).payload['passed']
