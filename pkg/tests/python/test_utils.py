import builtins
import json
import os
from unittest.mock import MagicMock, mock_open

import numpy as np
import pytest

import utils
from sxtypes import ParameterError

# ------------------------------
#    get_thread_count
# ------------------------------

@pytest.mark.utils
@pytest.mark.parametrize(
    'raw,expected',
    [
        ('4', 4),
        ('1', 1),
        ('0', 1),
        ('-3', 1),
        ('', 1),
        (' 2 ', 2),
    ]
)
def test_get_thread_count(monkeypatch, raw, expected):
    monkeypatch.setenv('SIGNX_THREADS', raw)
    assert utils.get_thread_count() == expected

@pytest.mark.utils
def test_get_thread_count_default(monkeypatch):
    monkeypatch.delenv('SIGNX_THREADS', raising = False)
    assert utils.get_thread_count() == 1

@pytest.mark.utils
def test_get_thread_count_invalid(monkeypatch):
    monkeypatch.setenv('SIGNX_THREADS', 'many')
    with pytest.raises(ParameterError):
        utils.get_thread_count()

# ------------------------------
#    load_environment
# ------------------------------

@pytest.mark.utils
def test_load_environment_reads_env_file(monkeypatch, tmp_path):
    (tmp_path / '.env').write_text('SIGNX_THREADS=3\n', encoding = 'utf-8')
    monkeypatch.setattr(utils, 'PROJECT_ROOT', tmp_path)
    monkeypatch.setenv('SIGNX_THREADS', 'placeholder')
    monkeypatch.delenv('SIGNX_THREADS')

    utils.load_environment()
    assert os.environ['SIGNX_THREADS'] == '3'

@pytest.mark.utils
def test_load_environment_keeps_existing_values(monkeypatch, tmp_path):
    (tmp_path / '.env').write_text('SIGNX_THREADS=3\n', encoding = 'utf-8')
    monkeypatch.setattr(utils, 'PROJECT_ROOT', tmp_path)
    monkeypatch.setenv('SIGNX_THREADS', '8')

    utils.load_environment()
    assert os.environ['SIGNX_THREADS'] == '8'

@pytest.mark.utils
def test_load_environment_without_file(monkeypatch, tmp_path):
    monkeypatch.setattr(utils, 'PROJECT_ROOT', tmp_path)
    mock_load = MagicMock()
    monkeypatch.setattr(utils, 'load_dotenv', mock_load)

    utils.load_environment()
    mock_load.assert_not_called()

# ------------------------------
#    make_rng
# ------------------------------

@pytest.mark.utils
def test_make_rng_is_deterministic():
    a = utils.make_rng(7, 'corpus', 3).random(5)
    b = utils.make_rng(7, 'corpus', 3).random(5)
    np.testing.assert_array_equal(a, b)

@pytest.mark.utils
@pytest.mark.parametrize(
    'other',
    [
        (8, 'corpus', 3),
        (7, 'dropout', 3),
        (7, 'corpus', 4),
        (7, 'corpus', 3, 0),
    ]
)
def test_make_rng_streams_differ(other):
    base = utils.make_rng(7, 'corpus', 3).random(5)
    assert not np.array_equal(base, utils.make_rng(*other).random(5))

@pytest.mark.utils
def test_stream_id_is_stable():
    assert utils.stream_id('corpus') == utils.stream_id('corpus')
    assert utils.stream_id('corpus') != utils.stream_id('augmentation')

# ------------------------------
#    format_duration
# ------------------------------

@pytest.mark.utils
@pytest.mark.parametrize(
    'seconds,expected',
    [
        (0, '[0m:00s]'),
        (5.7, '[0m:05s]'),
        (65, '[1m:05s]'),
        (3600, '[60m:00s]'),
    ]
)
def test_format_duration(seconds, expected):
    assert utils.format_duration(seconds) == expected

# ------------------------------
#    JSON helpers
# ------------------------------

@pytest.mark.utils
def test_write_json_sorts_keys(tmp_path):
    path = tmp_path / 'out.json'
    utils.write_json(path, {'b': 1, 'a': [1, 2]})

    text = path.read_text(encoding = 'utf-8')
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith('\n')
    assert utils.read_json(path) == {'a': [1, 2], 'b': 1}

@pytest.mark.utils
def test_read_json_uses_utf8(monkeypatch):
    m = mock_open(read_data = json.dumps({'gloss': 'HEAR/LISTEN'}))
    monkeypatch.setattr(builtins, 'open', m)

    assert utils.read_json('anything.json') == {'gloss': 'HEAR/LISTEN'}
    m.assert_called_once_with('anything.json', 'r', encoding = 'utf-8')

@pytest.mark.utils
def test_jsonl_appends_lines(tmp_path):
    path = tmp_path / 'log.jsonl'
    utils.append_jsonl(path, {'epoch': 0, 'loss': 1.5})
    utils.append_jsonl(path, {'epoch': 1, 'loss': 1.25})

    assert utils.read_jsonl(path) == [{'epoch': 0, 'loss': 1.5}, {'epoch': 1, 'loss': 1.25}]
    assert len(path.read_text(encoding = 'utf-8').splitlines()) == 2

@pytest.mark.utils
def test_sha256_file(tmp_path):
    path = tmp_path / 'data.bin'
    path.write_bytes(b'abc')
    assert utils.sha256_file(path) == 'ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad'

# ------------------------------
#    print helpers
# ------------------------------

@pytest.mark.utils
@pytest.mark.parametrize(
    'func,msg',
    [
        (utils.print_info, 'info message'),
        (utils.print_ok, 'ok message'),
        (utils.print_warning, 'warning message'),
        (utils.print_error, 'error message'),
    ]
)
def test_print_functions(monkeypatch, func, msg):
    printed = []
    monkeypatch.setattr('builtins.print', lambda *a, **kw: printed.append(' '.join(str(x) for x in a)))

    func(msg)
    assert any(msg in line for line in printed)

@pytest.mark.utils
def test_print_val_aligns_name(monkeypatch):
    printed = []
    monkeypatch.setattr('builtins.print', lambda *a, **kw: printed.append(' '.join(str(x) for x in a)))

    utils.print_val('Seed', 7)
    assert any('Seed' + ' ' * 21 + ': 7' in line for line in printed)
