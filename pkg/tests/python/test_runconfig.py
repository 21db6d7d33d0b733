"""
Unit tests for run configuration parsing and scale / seed routing.
"""

import os
import sys

import pytest

# Add the shared/python directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'shared', 'python'))

import runconfig
from runconfig import RunConfig
from sxtypes import PAPER_UNIFIED_WIDTH, ConfigError


# ------------------------------
#    PARSING
# ------------------------------

@pytest.mark.runconfig
def test_parse_sections_and_keys():
    text = '\n'.join([
        '# desk-scale overrides',
        '[posespace]',
        'epochs = 3',
        '',
        '[latentops]',
        'folds = 4',
        'gamma = 0.2',
        '; recognizer',
        '[recognizer]',
        'kernels = 3, 5',
        'teacher_mode = pretrain',
        '[decoder]',
        'top_p = 0.9',
        '[pipeline]',
        'ablation = yes',
    ])
    config = runconfig.parse_run_config(text)

    assert config.posespace.epochs == 3
    assert config.augment.folds == 4
    assert config.compile.gamma == 0.2
    assert config.recognizer.kernels == (3, 5)
    assert config.recognizer.teacher_mode == 'pretrain'
    assert config.decoder.top_p == 0.9
    assert config.pipeline.ablation is True

@pytest.mark.runconfig
@pytest.mark.parametrize('text,line', [
    ('[posespace]\n\nbogus = 1', 3),
    ('[nowhere]\nepochs = 1', 1),
    ('epochs = 1', 1),
    ('[posespace]\nepochs = three', 2),
    ('[posespace]\nepochs', 2),
    ('[pipeline\nseed = 1', 1),
    ('[pipeline]\nablation = maybe', 2),
])
def test_parse_errors_name_the_line(text, line):
    with pytest.raises(ConfigError) as excinfo:
        runconfig.parse_run_config(text)

    assert excinfo.value.line == line
    assert str(excinfo.value).startswith(f'E_CONFIG: line {line}:')

@pytest.mark.runconfig
@pytest.mark.parametrize('text,line', [
    ('[latentops]\nrho = 1.5', 2),
    ('[recognizer]\nheads = 3\nepochs = 2', 3),
    ('[pipeline]\nscale = huge', 2),
    ('[pipeline]\nseed = -1', 2),
])
def test_range_failures_point_at_the_section(text, line):
    with pytest.raises(ConfigError) as excinfo:
        runconfig.parse_run_config(text)
    assert excinfo.value.line == line

@pytest.mark.runconfig
def test_mismatched_track_dims():
    with pytest.raises(ConfigError):
        runconfig.parse_run_config('[synth]\ntrack_dims = 12, 8, 6, 16, 18')

@pytest.mark.runconfig
def test_coerce_types():
    assert runconfig.coerce(' 5 ', 1, 1) == 5
    assert runconfig.coerce('0.5', 1.0, 1) == 0.5
    assert runconfig.coerce('off', True, 1) is False
    assert runconfig.coerce('none', None, 1) is None
    assert runconfig.coerce('0.8, 1.2', (0.8, 1.2), 1) == (0.8, 1.2)


# ------------------------------
#    LOADING AND ROUTING
# ------------------------------

@pytest.mark.runconfig
def test_load_run_config_file(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('[synth]\nutterances = 20\n', encoding = 'utf-8')

    assert runconfig.load_run_config(path).synth.utterances == 20
    assert runconfig.load_run_config(None).synth.utterances == 200

@pytest.mark.runconfig
def test_load_run_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        runconfig.load_run_config(tmp_path / 'absent.cfg')

@pytest.mark.runconfig
def test_with_seed_routes_to_seeded_sections():
    config = RunConfig().with_seed(42)
    assert (config.pipeline.seed, config.synth.seed, config.compile.seed) == (42, 42, 42)

@pytest.mark.runconfig
def test_with_scale_paper_shapes_keeps_corpus_dims():
    config = RunConfig()
    config.recognizer.epochs = 3
    config.with_scale('paper-shapes')

    assert config.pipeline.scale == 'paper-shapes'
    assert config.posespace.unified_width == PAPER_UNIFIED_WIDTH
    assert config.posespace.track_dims == config.synth.track_dims
    assert config.recognizer.d_model == 256 and config.recognizer.epochs == 3
    config.validate()

@pytest.mark.runconfig
def test_tiny_run_config_is_valid(tiny_run_config):
    assert tiny_run_config.recognizer.epochs == 1
    assert tiny_run_config.sections()['latentops'] == [tiny_run_config.compile, tiny_run_config.augment]
