"""Unit tests for configuration loading."""
import json

import pytest

from burst_sr.config import DEFAULT_CONFIG, load_config, load_run_config, merge_config, thread_count
from burst_sr.errors import ConfigError


def test_load_config_defaults(tmp_path):
    """Test a missing config.yaml falls back to the defaults."""
    cfg = load_config(str(tmp_path / 'absent.yaml'))
    assert cfg == DEFAULT_CONFIG
    assert cfg is not DEFAULT_CONFIG


def test_load_config_overlays_yaml(tmp_path):
    """Test YAML values override defaults key by key."""
    path = tmp_path / 'config.yaml'
    path.write_text('imaging:\n  frames: 8\nclassic:\n  wiener_nsr: 0.05\n')
    cfg = load_config(str(path))
    assert cfg['imaging']['frames'] == 8
    assert cfg['imaging']['scale'] == 2
    assert cfg['classic']['wiener_nsr'] == 0.05


def test_repository_config_matches_defaults():
    """Test the shipped config.yaml agrees with the built-in defaults."""
    assert load_config() == DEFAULT_CONFIG


def test_merge_config_is_recursive():
    """Test nested overrides leave sibling keys alone."""
    merged = merge_config({'a': {'x': 1, 'y': 2}, 'b': 3}, {'a': {'y': 5}})
    assert merged == {'a': {'x': 1, 'y': 5}, 'b': 3}


def test_load_run_config(tmp_path):
    """Test per-run JSON overlays and its failure modes."""
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'imaging': {'frames': 4}, 'input': {'scene': 'textured'}}))
    cfg = load_run_config(str(path))
    assert cfg['imaging']['frames'] == 4
    assert cfg['input'] == {'scene': 'textured'}
    assert cfg['training']['batch_size'] == 16

    with pytest.raises(FileNotFoundError):
        load_run_config(str(tmp_path / 'missing.json'))
    path.write_text('{not json')
    with pytest.raises(ConfigError):
        load_run_config(str(path))
    path.write_text(json.dumps({'imagin': {}}))
    with pytest.raises(ConfigError):
        load_run_config(str(path))
    path.write_text('[1, 2]')
    with pytest.raises(ConfigError):
        load_run_config(str(path))


@pytest.mark.parametrize('raw,expected', [(None, 1), ('4', 4), ('0', 1), ('many', 1)])
def test_thread_count(monkeypatch, raw, expected):
    """Test BURSTSR_THREADS parsing."""
    if raw is None:
        monkeypatch.delenv('BURSTSR_THREADS', raising=False)
    else:
        monkeypatch.setenv('BURSTSR_THREADS', raw)
    assert thread_count() == expected
