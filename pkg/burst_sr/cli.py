"""Command-line front end: simulate, sr, train and evaluate.

Every command writes ``manifest.json`` into its output directory and
registers the run in the SQLite registry. Exit codes: 0 success,
2 usage or configuration error, 3 I/O error, 4 numeric failure.
"""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np
import pandas as pd

from burst_sr import __version__
from burst_sr.classic_sr import ClassicParams, classic_sr
from burst_sr.config import get_config, load_run_config, thread_count
from burst_sr.data_generator import make_patch_dataset, make_translation_pairs, target_scene, textured_scene
from burst_sr.database import register_run
from burst_sr.errors import ConfigError, InvalidArgumentError, StateError, TrainingFailureError
from burst_sr.imaging import BurstConfig, MotionSpec, delta_psf, gaussian_psf, phase_coverage, synthesize_burst
from burst_sr import misr_net
from burst_sr.raster_io import export_png, read_burst, read_raster, write_burst, write_json_atomic, write_raster
from burst_sr import reports

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

MANIFEST_NAME = 'manifest.json'


# ---------------------------------------------------------------------------
# Manifest helpers
# ---------------------------------------------------------------------------

def file_hash(path):
    """sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode('utf-8')).hexdigest()


class RunRecorder:
    """Collects what a command read and wrote, then writes its manifest."""

    def __init__(self, command, out_dir, config, seed):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.seed = seed
        self.inputs = {}
        self.outputs = {}
        self.metrics = {}
        self.extra = {}
        self.started = time.perf_counter()

    def add_input(self, name, path):
        if os.path.isdir(path):
            for entry in sorted(os.listdir(path)):
                full = os.path.join(path, entry)
                if os.path.isfile(full) and entry != MANIFEST_NAME:
                    self.inputs[f'{name}/{entry}'] = file_hash(full)
        else:
            self.inputs[name] = file_hash(path)

    def add_output(self, name, path):
        self.outputs[name] = os.path.relpath(path, self.out_dir)

    def finish(self, db_path=None):
        """Write ``manifest.json`` atomically and register the run."""
        identity = {'command': self.command, 'config': self.config, 'inputs': self.inputs,
                    'seed': self.seed, 'version': __version__}
        manifest = {
            'command': self.command,
            'config': self.config,
            'config_hash': config_hash(self.config),
            'input_hashes': self.inputs,
            'seed': self.seed,
            'version': __version__,
            'outputs': self.outputs,
            'metrics': {k: _finite_or_none(v) for k, v in self.metrics.items()},
            'run_hash': config_hash(identity),
            'threads': thread_count(),
            'wall_time': round(time.perf_counter() - self.started, 3),
        }
        manifest.update(self.extra)
        path = os.path.join(self.out_dir, MANIFEST_NAME)
        write_json_atomic(path, manifest)
        registry = dict(manifest, manifest_path=os.path.abspath(path), output_dir=os.path.abspath(self.out_dir))
        register_run(registry, {k: v for k, v in self.metrics.items() if _finite_or_none(v) is not None},
                     db_path=db_path)
        return manifest


def _finite_or_none(value):
    value = float(value)
    return value if math.isfinite(value) else None


def _require_finite(name, array):
    if not np.all(np.isfinite(array)):
        raise FloatingPointError(f"{name} contains non-finite values")


def _run_config(args):
    config = load_run_config(args.config) if args.config else json.loads(json.dumps(get_config()))
    if args.seed is not None:
        config['imaging']['seed'] = int(args.seed)
        config['training']['seed'] = int(args.seed)
    return config


def _snr(value):
    # null / 0 / "inf" in JSON configs mean a noiseless burst
    if value in (None, 0, 'inf', 'Infinity'):
        return math.inf
    return float(value)


def _psf_sigma(config):
    psf = config.get('psf') or {}
    return float(psf.get('sigma', config['imaging']['psf_sigma']) or 0.0)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load_scene(config, base_dir):
    source = config.get('input') or {}
    if source.get('hr'):
        path = source['hr']
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return read_raster(path), path
    scene = source.get('scene', {})
    kind = scene.get('kind', 'textured')
    shape = (int(scene.get('height', 128)), int(scene.get('width', 128)))
    seed = int(scene.get('seed', 0))
    if kind == 'textured':
        return textured_scene(shape, seed=seed, channels=int(scene.get('channels', 1)),
                              shapes=int(scene.get('shapes', 0))), None
    if kind == 'target':
        return target_scene(shape, seed=seed)[0], None
    raise ConfigError(f"Unknown scene kind '{kind}'")


def cmd_simulate(args):
    """Degrade an HR scene into a burst directory."""
    config = _run_config(args)
    imaging = config['imaging']
    recorder = RunRecorder('simulate', args.out, config, int(imaging['seed']))
    base_dir = os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()
    hr, hr_path = _load_scene(config, base_dir)
    if hr_path:
        recorder.add_input('hr', hr_path)

    motion = config.get('motion') or {}
    sigma = _psf_sigma(config)
    cfg = BurstConfig(frames=int(imaging['frames']), s=int(imaging['scale']),
                      psf=gaussian_psf(sigma) if sigma > 0 else delta_psf(),
                      motion=MotionSpec(mode=motion.get('mode', 'translational'), shifts=motion.get('shifts')),
                      snr=_snr(imaging['snr']), seed=int(imaging['seed']),
                      decimation=imaging['decimation'], boundary=imaging['boundary'])
    burst = synthesize_burst(hr, cfg)

    pixel_size = (config.get('input') or {}).get('pixel_size_m')
    meta = {'psf_sigma': sigma, 'decimation': cfg.decimation, 'snr': imaging['snr']}
    index = write_burst(args.out, burst, cfg.s, pixel_size_m=pixel_size, meta=meta)
    for name in index['frames']:
        recorder.add_output(name, os.path.join(args.out, name))
    recorder.add_output('burst', os.path.join(args.out, 'burst.json'))

    shifts = [(f[..., 0].mean(), f[..., 1].mean()) for f in burst.true_flows]
    coverage = phase_coverage(shifts, cfg.s)
    recorder.extra['s'] = cfg.s
    recorder.extra['phase_coverage'] = coverage.occupancy.tolist()
    if not coverage.feasible:
        print(f"  Warning: phase cells {coverage.missing_cells} receive no frame")
    recorder.finish(args.db)
    print(f"✓ Simulated {cfg.frames} frames of {burst.shape[0]}×{burst.shape[1]} into {args.out}")
    return EXIT_OK


def _reconstruct(burst, index, config, method, checkpoint, s):
    if method == 'classic':
        meta = index.get('meta') or {}
        params = ClassicParams.from_config(config['classic'],
                                           psf_sigma=meta.get('psf_sigma', _psf_sigma(config)),
                                           decimation=meta.get('decimation', config['imaging']['decimation']))
        return classic_sr(burst, s, params), None
    params, model = misr_net.load_checkpoint(checkpoint)
    return misr_net.forward(burst, params, s), model


def cmd_sr(args):
    """Super-resolve a burst directory with the classic pipeline or the network."""
    config = _run_config(args)
    if args.method == 'net' and not args.checkpoint:
        raise ConfigError("--checkpoint is required for --method net")
    burst, index = read_burst(args.burst)
    s = int(config['imaging']['scale']) if args.config else int(index.get('s', config['imaging']['scale']))

    recorder = RunRecorder('sr', args.out, config, int(config['imaging']['seed']))
    recorder.add_input('burst', args.burst)
    if args.checkpoint:
        recorder.add_input('checkpoint', args.checkpoint)

    sr, model = _reconstruct(burst, index, config, args.method, args.checkpoint, s)
    _require_finite('SR output', sr)
    pixel_size = index.get('pixel_size_m')
    out_path = os.path.join(args.out, 'sr.f32')
    write_raster(out_path, sr, pixel_size / s if pixel_size else None)
    recorder.add_output('sr', out_path)
    recorder.add_output('preview', export_png(os.path.join(args.out, 'sr.png'), sr))

    recorder.extra.update({'s': s, 'method': args.method, 'frames': len(burst)})
    if model is not None:
        recorder.extra['architecture_hash'] = model['architecture_hash']
    if burst.hr_truth is not None and burst.hr_truth.shape == sr.shape:
        error = float(np.max(np.abs(sr - burst.hr_truth)))
        recorder.metrics['max_abs_error'] = error
        recorder.extra['max_abs_error'] = error
    recorder.finish(args.db)
    print(f"✓ {args.method} SR of {len(burst)} frames → {sr.shape[0]}×{sr.shape[1]} ({out_path})")
    return EXIT_OK


def cmd_train(args):
    """Pretrain the motion estimator, train the network, save the best checkpoint."""
    config = _run_config(args)
    training = config['training']
    imaging = config['imaging']
    s = int(imaging['scale'])
    cfg = misr_net.TrainConfig.from_config(training, s=s)
    recorder = RunRecorder('train', args.out, config, cfg.seed)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
    psf_sigma = _psf_sigma(config)

    print("\n[1/3] Generating synthetic patch bursts...")
    common = dict(patch=cfg.patch, frames=cfg.frames, s=s, snr=_snr(cfg.snr), psf_sigma=psf_sigma)
    train_set = make_patch_dataset(int(training['train_patches']), seed=int(seeds[0]), **common)
    val_set = make_patch_dataset(int(training['val_patches']), seed=int(seeds[1]), **common)
    print(f"✓ {len(train_set)} training and {len(val_set)} validation bursts")

    params = misr_net.init_params(train_set[0].shape[2], cfg.seed)
    if cfg.pretrain_epochs > 0:
        print("\n[2/3] Pretraining motion estimator...")
        pairs = make_translation_pairs(int(training['pretrain_pairs']), size=int(training['pretrain_size']),
                                       seed=int(seeds[2]), channels=train_set[0].shape[2])
        params, pre_history = misr_net.pretrain_motion(pairs, cfg, params)
        recorder.metrics['pretrain_epe'] = pre_history.best_val_loss
        print(f"✓ Motion EPE {pre_history.initial_val_loss:.4f} → {pre_history.best_val_loss:.4f}")
    else:
        print("\n[2/3] Skipping motion pretraining")

    print("\n[3/3] Training network...")
    params, history = misr_net.train(train_set, val_set, cfg, params)
    print(f"✓ Validation L1 {history.initial_val_loss:.5f} → {history.best_val_loss:.5f} "
          f"(best epoch {history.best_epoch})")

    ckpt_path = os.path.join(args.out, 'model.json')
    misr_net.save_checkpoint(ckpt_path, params, seed=cfg.seed, epoch=history.best_epoch,
                             val_loss=history.best_val_loss)
    recorder.add_output('checkpoint', ckpt_path)
    recorder.add_output('weights', os.path.join(args.out, 'model.f32'))

    epochs = list(range(len(history.val_losses)))
    table = pd.DataFrame({'epoch': epochs,
                          'train_loss': [math.nan] + history.train_losses,
                          'val_loss': history.val_losses})
    recorder.add_output('history', reports.write_csv(table, os.path.join(args.out, 'history.csv')))

    recorder.metrics.update({'val_l1_initial': history.initial_val_loss, 'val_l1': history.best_val_loss,
                             'best_epoch': history.best_epoch})
    recorder.extra.update({'s': s, 'stopped_epoch': history.stopped_epoch})
    recorder.finish(args.db)
    print(f"✓ Saved checkpoint to {ckpt_path}")
    return EXIT_OK


def cmd_evaluate(args):
    """Run the quality battery on an SR raster against its LR reference."""
    config = _run_config(args)
    recorder = RunRecorder('evaluate', args.out, config, int(config['imaging']['seed']))
    sr = read_raster(args.sr)
    reference = read_raster(args.reference)
    recorder.add_input('sr', args.sr)
    recorder.add_input('reference', args.reference)

    rois = None
    if args.rois:
        rois = reports.load_rois(args.rois)
        recorder.add_input('rois', args.rois)
    truth = None
    if args.truth:
        truth = read_raster(args.truth)
        recorder.add_input('truth', args.truth)
    bicubic = None
    if args.bicubic:
        bicubic = read_raster(args.bicubic)
        recorder.add_input('bicubic', args.bicubic)

    report = reports.evaluate_product(sr, reference, rois, bicubic=bicubic, truth=truth,
                                      settings=config['quality'])
    outputs = reports.write_report(report, args.out, excel=args.excel, pdf=args.pdf)
    for name, path in outputs.items():
        recorder.add_output(name, path)
    for name, value in report.summary.items():
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            recorder.metrics[name] = value
    for row in report.fwhm.itertuples(index=False):
        recorder.metrics[f'sr_ratio_band_{row.band}'] = row.sr_ratio
    recorder.extra['s'] = report.s
    recorder.finish(args.db)
    print(f"✓ Evaluation report written to {args.out}")
    print(f"  - spectral deviation {report.summary['spectral_deviation']:.4%}")
    print(f"  - correlation {report.summary['correlation']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog='burst-sr', description='Burst multi-frame super-resolution toolkit',
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p):
        p.add_argument('--config', help='per-run JSON config')
        p.add_argument('--seed', type=int, help='overrides the config seed')
        p.add_argument('--out', required=True, help='output directory')
        p.add_argument('--db', help='run registry SQLite file (default from config.yaml)')

    p = sub.add_parser('simulate', help='synthesize a burst from an HR scene')
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('sr', help='super-resolve a burst directory')
    p.add_argument('burst', help='burst directory')
    p.add_argument('--method', choices=['classic', 'net'], default='classic')
    p.add_argument('--checkpoint', help='network checkpoint (required for --method net)')
    common(p)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser('train', help='train the network on synthetic patch bursts')
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('evaluate', help='quality report of an SR product')
    p.add_argument('--sr', required=True, help='SR raster (.f32)')
    p.add_argument('--reference', required=True, help='LR reference raster (.f32)')
    p.add_argument('--rois', help='ROI JSON file')
    p.add_argument('--truth', help='HR ground truth raster')
    p.add_argument('--bicubic', help='bicubic baseline raster (computed when absent)')
    p.add_argument('--excel', action='store_true', help='also write report.xlsx')
    p.add_argument('--pdf', action='store_true', help='also write report.pdf')
    common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError, StateError) as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingFailureError, FloatingPointError) as e:
        print(f"✗ Numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"✗ I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
