"""Shared fixtures for the burst_sr test suite."""
import numpy as np
import pytest

from burst_sr.data_generator import textured_scene
from burst_sr.imaging import BurstConfig, MotionSpec, delta_psf, synthesize_burst

QUARTER_SHIFTS = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)]


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow acceptance tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running acceptance test (needs --runslow)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def hr_scene():
    """64×64 single-band procedural scene."""
    return textured_scene((64, 64), seed=5)


@pytest.fixture
def polyphase_burst(hr_scene):
    """Noiseless 4-frame burst at quarter phases: every HR pixel sampled exactly once."""
    cfg = BurstConfig(frames=4, s=2, psf=delta_psf(), motion=MotionSpec(shifts=QUARTER_SHIFTS),
                      snr=float('inf'), seed=0, decimation='point')
    return synthesize_burst(hr_scene, cfg)


@pytest.fixture(autouse=True)
def isolated_registry(tmp_path, monkeypatch):
    """Point the run registry at a temporary SQLite file."""
    from burst_sr import config

    cfg = config.load_config()
    cfg['runtime']['database'] = str(tmp_path / 'registry.db')
    monkeypatch.setattr(config.get_config, '_config', cfg, raising=False)
    return cfg['runtime']['database']
