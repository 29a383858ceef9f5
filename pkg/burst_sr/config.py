"""Configuration loading: config.yaml defaults merged with per-run JSON files."""
import copy
import json
import os

import yaml

from burst_sr.errors import ConfigError

DEFAULT_CONFIG = {
    'imaging': {
        'frames': 24,
        'scale': 2,
        'snr': 800.0,
        'psf_sigma': 0.5,
        'decimation': 'block',
        'boundary': 'replicate',
        'seed': 0
    },
    'classic': {
        'subpixel_refine': True,
        'wiener_nsr': 0.01,
        'splat_radius': 1,
        'block_integration': True,
        'use_true_flows': True
    },
    'training': {
        'batch_size': 16,
        'patch': 64,
        'frames': 8,
        'lr_encdec': 1e-4,
        'lr_motion': 1e-5,
        'beta1': 0.9,
        'beta2': 0.999,
        'adam_eps': 1e-8,
        'max_epochs': 30,
        'early_stop_patience': 5,
        'pretrain_epochs': 10,
        'pretrain_lr': 1e-3,
        'pretrain_pairs': 200,
        'pretrain_size': 32,
        'snr': 800.0,
        'train_patches': 200,
        'val_patches': 50,
        'seed': 0
    },
    'quality': {
        'esf_bin': 0.25,
        'spectrum_bins': 64,
        'nss_patch': 32,
        'nss_regularization': 1e-3,
        'spectral_tolerance': 0.02,
        'correlation_floor': 0.99
    },
    'runtime': {
        'database': 'data/burstsr.db'
    }
}


def load_config(path=None):
    """Load configuration from config.yaml file."""
    config_path = path or os.path.join(os.path.dirname(__file__), '..', 'config.yaml')
    if not os.path.exists(config_path):
        # Return default config if file doesn't exist
        return copy.deepcopy(DEFAULT_CONFIG)

    with open(config_path, 'r') as f:
        loaded = yaml.safe_load(f) or {}
    return merge_config(DEFAULT_CONFIG, loaded)


def get_config():
    """Get cached config or load it."""
    if not hasattr(get_config, '_config'):
        get_config._config = load_config()
    return get_config._config


def merge_config(base, override):
    """Recursively overlay ``override`` onto a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path):
    """Read a per-run JSON config and overlay it on the global defaults.

    Unknown top-level sections are rejected so that typos surface as a
    usage error instead of being silently ignored.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, 'r') as f:
            run_config = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    if not isinstance(run_config, dict):
        raise ConfigError(f"Config {path} must contain a JSON object")

    defaults = get_config()
    unknown = set(run_config) - set(defaults) - {'input', 'motion', 'psf'}
    if unknown:
        raise ConfigError(f"Unknown config sections in {path}: {sorted(unknown)}")
    return merge_config(defaults, run_config)


def thread_count():
    """Worker threads allowed by BURSTSR_THREADS (default 1)."""
    raw = os.environ.get('BURSTSR_THREADS', '1')
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
