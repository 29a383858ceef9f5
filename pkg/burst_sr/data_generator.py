"""Generate synthetic scenes, edges and burst datasets for testing and training."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import ndimage, special

from burst_sr.config import thread_count
from burst_sr.errors import InvalidArgumentError
from burst_sr.imaging import BurstConfig, MotionSpec, delta_psf, gaussian_psf, synthesize_burst, warp
from burst_sr.quality import Roi

logger = logging.getLogger(__name__)

# Spectral signatures (blue, green, red, NIR) of the target classes
SIGNATURES = {
    'deep_ocean': (0.08, 0.05, 0.03, 0.01),
    'desert': (0.25, 0.32, 0.40, 0.45),
    'vegetation': (0.04, 0.08, 0.05, 0.40),
    'cloud': (0.85, 0.86, 0.86, 0.84),
}
RED_BAND = 2
NIR_BAND = 3

# (sigma in pixels, relative amplitude) of the filtered-noise octaves
TEXTURE_OCTAVES = ((1.5, 0.25), (4.0, 0.5), (10.0, 1.0))


def _normalize(data, low=0.1, high=1.0):
    lo, hi = data.min(), data.max()
    if hi <= lo:
        return np.full_like(data, low)
    return low + (high - low) * (data - lo) / (hi - lo)


def _texture(shape, rng):
    field = np.zeros(shape)
    for sigma, amp in TEXTURE_OCTAVES:
        octave = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode='wrap')
        field += amp * octave / octave.std()
    return field


def textured_scene(shape=(128, 128), seed=0, channels=1, shapes=0):
    """Band-limited procedural scene in [0.1, 1.0].

    Filtered noise at three scales plus a smooth ramp; ``shapes`` adds soft
    edged rectangles for scenes that need structure.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = _texture(shape, rng)
    base += 2.0 * (rng.uniform(-1, 1) * xx / w + rng.uniform(-1, 1) * yy / h)

    if shapes:
        blocks = np.zeros(shape)
        for _ in range(shapes):
            bh, bw = rng.integers(h // 8, h // 3), rng.integers(w // 8, w // 3)
            top, left = rng.integers(0, h - bh), rng.integers(0, w - bw)
            blocks[top:top + bh, left:left + bw] += rng.uniform(-2.0, 2.0)
        base += ndimage.gaussian_filter(blocks, 0.7, mode='nearest')

    bands = [_normalize(base + 0.3 * _texture(shape, rng)) if channels > 1 else _normalize(base)
             for _ in range(channels)]
    return np.stack(bands, axis=2)


def slanted_edge(shape=(64, 64), angle_deg=5.0, sigma=1.0, low=0.2, high=0.8, orientation='vertical'):
    """Point-sampled Gaussian-blurred straight edge through the image centre.

    The edge is slanted by ``angle_deg`` from the vertical (or horizontal)
    axis; ``sigma=0`` gives an ideal step.
    """
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = math.radians(angle_deg)
    if orientation == 'vertical':
        dist = (xx - cx) * math.cos(theta) - (yy - cy) * math.sin(theta)
    elif orientation == 'horizontal':
        dist = (yy - cy) * math.cos(theta) - (xx - cx) * math.sin(theta)
    else:
        raise InvalidArgumentError(f"Unknown edge orientation '{orientation}'")
    if sigma > 0:
        profile = special.ndtr(dist / sigma)
    else:
        profile = np.where(dist > 0, 1.0, np.where(dist < 0, 0.0, 0.5))
    return (low + (high - low) * profile)[:, :, np.newaxis]


def target_scene(shape=(96, 96), seed=0, texture=0.03):
    """Four-band scene of ocean, desert, vegetation and cloud quadrants.

    Returns ``(scene, rois)`` with one ROI inside each quadrant, clear of the
    quadrant borders.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    layout = (('deep_ocean', 'desert'), ('vegetation', 'cloud'))
    scene = np.zeros((h, w, len(SIGNATURES['cloud'])))
    rois = {}
    qh, qw = h // 2, w // 2
    for i, row in enumerate(layout):
        for j, name in enumerate(row):
            scene[i * qh:(i + 1) * qh, j * qw:(j + 1) * qw, :] = SIGNATURES[name]
            rois[name] = Roi(i * qh + qh // 4, j * qw + qw // 4, qh // 2, qw // 2)
    scene = ndimage.gaussian_filter(scene, sigma=(1.0, 1.0, 0.0), mode='nearest')
    modulation = 1.0 + texture * _texture(shape, rng) / 3.0
    scene *= np.clip(modulation, 0.5, 1.5)[:, :, np.newaxis]
    return scene, rois


def _burst_psf(psf_sigma):
    return gaussian_psf(psf_sigma) if psf_sigma else delta_psf()


def make_patch_dataset(n, patch=64, frames=8, s=2, snr=800.0, seed=0, psf_sigma=0.5, channels=1, workers=None):
    """``n`` synthetic bursts of ``patch``×``patch`` LR frames, each with its HR truth.

    Bursts are generated on ``workers`` threads (default ``BURSTSR_THREADS``);
    every burst has its own seed, so the result does not depend on the count.
    """
    seeds = np.random.SeedSequence(seed).generate_state(2 * n)

    def build(i):
        hr = textured_scene((patch * s, patch * s), seed=int(seeds[2 * i]), channels=channels)
        cfg = BurstConfig(frames=frames, s=s, psf=_burst_psf(psf_sigma), motion=MotionSpec(),
                          snr=snr, seed=int(seeds[2 * i + 1]))
        return synthesize_burst(hr, cfg)

    with ThreadPoolExecutor(max_workers=workers or thread_count()) as pool:
        bursts = list(pool.map(build, range(n)))
    logger.info("Generated %d patch bursts (%d frames, %d×%d, s=%d)", n, frames, patch, patch, s)
    return bursts


def make_translation_pairs(n, size=32, max_shift=1.0, seed=0, channels=1):
    """``(frame, ref, (dx, dy))`` triples with ``frame(p) = ref(p + (dx, dy))``."""
    rng = np.random.default_rng(seed)
    margin = math.ceil(max_shift) + 2
    pairs = []
    for _ in range(n):
        scene = textured_scene((size + 2 * margin, size + 2 * margin),
                               seed=int(rng.integers(2 ** 32)), channels=channels)
        shift = rng.uniform(-max_shift, max_shift, size=2) if max_shift > 0 else np.zeros(2)
        moved = warp(scene, np.broadcast_to(shift, scene.shape[:2] + (2,)))
        crop = (slice(margin, margin + size), slice(margin, margin + size))
        pairs.append((moved[crop].copy(), scene[crop].copy(), (float(shift[0]), float(shift[1]))))
    return pairs
