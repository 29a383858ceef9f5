"""Burst formation model: optics, motion, detector sampling and noise.

Rasters are numpy arrays shaped (H, W, C) in float64. Flow fields are
(H, W, 2) arrays in LR pixel units with ``[..., 0]`` the x (column)
displacement and ``[..., 1]`` the y (row) displacement; a pixel ``p`` of a
frame corresponds to position ``p + flow(p)`` of the reference frame.

The chain applied by :func:`synthesize_burst` for each frame is
motion → blur → decimate → noise.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, signal

from burst_sr.errors import EmptyBurstError, InvalidArgumentError

logger = logging.getLogger(__name__)

# boundary policy -> scipy mode, for interpolation and for filtering
INTERP_MODES = {'replicate': 'nearest', 'reflect': 'reflect', 'zero': 'grid-constant'}
FILTER_MODES = {'replicate': 'nearest', 'reflect': 'reflect', 'zero': 'constant'}

DECIMATION_MODES = ('block', 'point')

# Ground resolution catalog of contemporary ocean-colour sensors (metres, km, revisit)
SENSORS = {
    'MERIS': {'lac_m': 300, 'gac_m': 1200, 'swath_km': 1150, 'revisit': '3 days'},
    'MODIS': {'lac_m': 250, 'gac_m': None, 'swath_km': 2330, 'revisit': '1-2 days'},
    'VIIRS': {'lac_m': 375, 'gac_m': None, 'swath_km': 3040, 'revisit': '12 hours'},
    'OLCI': {'lac_m': 300, 'gac_m': 1000, 'swath_km': 1270, 'revisit': '2 days'},
    'OCM-3': {'lac_m': 360, 'gac_m': 1080, 'swath_km': 1550, 'revisit': '2 days'},
    'SOCM-3': {'lac_m': 240, 'gac_m': 750, 'swath_km': 1550, 'revisit': '2 days'},
}


def as_raster(image):
    """Return ``image`` as a finite float64 (H, W, C) array."""
    data = np.asarray(image, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    if data.ndim != 3:
        raise InvalidArgumentError(f"Raster must be H×W or H×W×C, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise InvalidArgumentError("Raster contains non-finite values")
    return data


def _check_boundary(boundary, modes):
    if boundary not in modes:
        raise InvalidArgumentError(f"Unknown boundary policy '{boundary}', expected one of {sorted(modes)}")
    return modes[boundary]


# ---------------------------------------------------------------------------
# Point spread functions
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Psf:
    """Discrete PSF: a (2r+1)×(2r+1) kernel whose taps sum to one.

    ``sigma`` is set for Gaussian kernels (in pixels of the kernel's own
    grid) so the same optics can be re-sampled exactly on a finer grid.
    """
    kernel: np.ndarray
    sigma: Optional[float] = None

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
            raise InvalidArgumentError(f"PSF kernel must be square with odd size, got {kernel.shape}")
        total = kernel.sum()
        if not np.isfinite(total) or total <= 0:
            raise InvalidArgumentError("PSF taps must have a positive finite sum")
        self.kernel = kernel / total

    @property
    def radius(self):
        return self.kernel.shape[0] // 2

    @property
    def is_delta(self):
        return self.kernel.shape == (1, 1)

    def on_grid(self, s):
        """The same physical PSF sampled on a grid ``s`` times finer."""
        if s == 1 or self.is_delta:
            return self
        if self.sigma is not None:
            return gaussian_psf(self.sigma * s)
        r = self.radius
        fine = np.arange(-r * s, r * s + 1) / s + r
        yy, xx = np.meshgrid(fine, fine, indexing='ij')
        taps = ndimage.map_coordinates(self.kernel, [yy, xx], order=1, mode='grid-constant', cval=0.0)
        return Psf(taps)


def gaussian_psf(sigma, radius=None):
    """Sampled isotropic Gaussian kernel renormalized to unit sum."""
    if not sigma > 0:
        raise InvalidArgumentError(f"PSF sigma must be positive, got {sigma}")
    min_radius = max(1, math.ceil(3 * sigma))
    if radius is None:
        radius = min_radius
    elif radius < min_radius:
        raise InvalidArgumentError(f"PSF radius {radius} is below ceil(3·sigma) = {min_radius}")
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma * sigma))
    return Psf(g, sigma=float(sigma))


def delta_psf():
    """Identity PSF (no optical blur)."""
    return Psf(np.ones((1, 1)))


def box_psf(s):
    """Detector integration of an s×s block, centered, on the HR grid.

    Even sizes straddle half pixels, so the end taps carry half weight.
    """
    if s < 1:
        raise InvalidArgumentError(f"Box size must be ≥ 1, got {s}")
    if s % 2:
        taps = np.ones(s)
    else:
        taps = np.r_[0.5, np.ones(s - 1), 0.5]
    return Psf(np.outer(taps, taps))


def compose_psf(a, b):
    """PSF of two blurs applied in sequence."""
    kernel = signal.convolve2d(a.kernel, b.kernel, mode='full')
    sigma = None
    if a.sigma is not None and b.sigma is not None:
        sigma = math.hypot(a.sigma, b.sigma)
    elif a.is_delta:
        sigma = b.sigma
    elif b.is_delta:
        sigma = a.sigma
    return Psf(kernel, sigma=sigma)


def _dtft_magnitude(taps, freq):
    x = np.arange(len(taps)) - len(taps) // 2
    response = np.sum(taps * np.exp(-2j * np.pi * freq * x))
    return float(abs(response) / abs(np.sum(taps)))


def mtf_of_psf(psf, freq):
    """MTF of the PSF at ``freq`` cycles/pixel, normalized to MTF(0) = 1.

    Taken from the DTFT of the kernel's central row. Gaussian PSFs are
    evaluated on an oversampled grid so frequencies above the kernel's own
    Nyquist limit report the optics rather than an alias.
    """
    if freq < 0:
        raise InvalidArgumentError(f"Frequency must be ≥ 0, got {freq}")
    if psf.is_delta:
        return 1.0
    if psf.sigma is not None:
        oversample = 4 * max(1, math.ceil(2 * freq))
        sigma = psf.sigma * oversample
        fine = gaussian_psf(sigma, radius=math.ceil(5 * sigma))
    else:
        oversample = 1
        fine = psf
    row = fine.kernel[fine.radius]
    return _dtft_magnitude(row, freq / oversample)


def mtf_curve(psf, n=16, max_freq=0.75):
    """MTF sampled on ``n`` points over [0, max_freq] cycles/pixel."""
    freqs = np.linspace(0.0, max_freq, n)
    return freqs, np.array([mtf_of_psf(psf, f) for f in freqs])


# ---------------------------------------------------------------------------
# Degradation stages
# ---------------------------------------------------------------------------

def warp(image, flow, boundary='replicate'):
    """Bilinearly sample ``image`` at ``p + flow(p)``."""
    img = as_raster(image)
    flow = np.asarray(flow, dtype=np.float64)
    height, width, channels = img.shape
    if flow.shape != (height, width, 2):
        raise InvalidArgumentError(f"Flow shape {flow.shape} does not match image {img.shape[:2]}")
    mode = _check_boundary(boundary, INTERP_MODES)
    if not np.any(flow):
        return img.copy()

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    coords = [yy + flow[..., 1], xx + flow[..., 0]]
    out = np.empty_like(img)
    for c in range(channels):
        out[..., c] = ndimage.map_coordinates(img[..., c], coords, order=1, mode=mode, cval=0.0)
    return out


def convolve(image, psf, boundary='replicate'):
    """Per-channel 2-D correlation with the PSF kernel."""
    img = as_raster(image)
    mode = _check_boundary(boundary, FILTER_MODES)
    size = psf.kernel.shape[0]
    if size > img.shape[0] or size > img.shape[1]:
        raise InvalidArgumentError(f"Kernel {psf.kernel.shape} is larger than image {img.shape[:2]}")
    if psf.is_delta:
        return img.copy()
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.correlate(img[..., c], psf.kernel, mode=mode, cval=0.0)
    return out


def decimate(image, s, mode='block'):
    """Reduce resolution by ``s``: s×s block average or point sampling."""
    img = as_raster(image)
    height, width, channels = img.shape
    if s < 1 or int(s) != s:
        raise InvalidArgumentError(f"Decimation factor must be a positive integer, got {s}")
    s = int(s)
    if height % s or width % s:
        raise InvalidArgumentError(f"Image {height}×{width} is not divisible by {s}")
    if mode not in DECIMATION_MODES:
        raise InvalidArgumentError(f"Unknown decimation mode '{mode}'")
    if s == 1:
        return img.copy()
    if mode == 'point':
        return img[::s, ::s, :].copy()
    return img.reshape(height // s, s, width // s, s, channels).mean(axis=(1, 3))


def add_noise(image, snr, seed):
    """Additive Gaussian noise with std = mean(image) / snr."""
    img = as_raster(image)
    if not snr > 0:
        raise InvalidArgumentError(f"SNR must be positive, got {snr}")
    if math.isinf(snr):
        return img.copy()
    std = abs(float(img.mean())) / snr
    rng = np.random.default_rng(seed)
    return img + rng.normal(0.0, std, size=img.shape)


def bin_gac(image, factor=3):
    """On-ground LAC→GAC binning (block average by ``factor``)."""
    return decimate(image, factor, mode='block')


def sr_ground_resolution(pixel_size_m, s):
    """Ground sample distance of a ×s super-resolved product."""
    if s < 1:
        raise InvalidArgumentError(f"Scale factor must be ≥ 1, got {s}")
    return pixel_size_m / s


def gac_factor(sensor='OCM-3'):
    """GAC/LAC resolution ratio for a catalogued sensor."""
    entry = SENSORS.get(sensor)
    if entry is None:
        raise InvalidArgumentError(f"Unknown sensor '{sensor}'")
    if entry['gac_m'] is None:
        raise InvalidArgumentError(f"Sensor '{sensor}' has no GAC mode")
    return entry['gac_m'] / entry['lac_m']


# ---------------------------------------------------------------------------
# Sampling feasibility
# ---------------------------------------------------------------------------

def required_samples(s):
    """Number of LR samples needed for factor ``s`` (grows as s²)."""
    if s < 1:
        raise InvalidArgumentError(f"Scale factor must be ≥ 1, got {s}")
    return math.ceil(s * s)


def required_shift(s):
    """Sub-pixel shift step needed for factor ``s``, in LR pixels."""
    if s < 1:
        raise InvalidArgumentError(f"Scale factor must be ≥ 1, got {s}")
    return 1.0 / s


@dataclass
class PhaseCoverage:
    """Occupancy of the s×s sub-pixel phase grid (rows: y phase, cols: x phase)."""
    occupancy: np.ndarray
    feasible: bool
    required: int

    @property
    def missing_cells(self):
        return [tuple(int(i) for i in cell) for cell in np.argwhere(self.occupancy == 0)]


def phase_coverage(shifts, s):
    """Bin fractional shifts onto the nearest of the s×s phase cells."""
    shifts = np.asarray(shifts, dtype=np.float64).reshape(-1, 2)
    if len(shifts) == 0:
        raise InvalidArgumentError("phase_coverage needs at least one shift")
    s = int(s)
    if s < 1:
        raise InvalidArgumentError(f"Scale factor must be ≥ 1, got {s}")
    frac = np.mod(shifts, 1.0)
    cells = np.floor(frac * s + 0.5).astype(int) % s
    occupancy = np.zeros((s, s), dtype=int)
    np.add.at(occupancy, (cells[:, 1], cells[:, 0]), 1)
    return PhaseCoverage(occupancy=occupancy, feasible=bool(np.all(occupancy > 0)),
                         required=required_samples(s))


# ---------------------------------------------------------------------------
# Bursts
# ---------------------------------------------------------------------------

@dataclass
class MotionSpec:
    """Per-frame motion: constant ``shifts`` (dx, dy) or dense ``flows``.

    With mode 'translational' and no shifts, shifts are drawn uniformly from
    [0, 1)² LR pixels with frame 0 pinned at zero.
    """
    mode: str = 'translational'
    shifts: Optional[Sequence[Tuple[float, float]]] = None
    flows: Optional[Sequence[np.ndarray]] = None

    def resolve(self, frames, lr_shape, rng):
        """Return one (h, w, 2) LR flow field per frame."""
        h, w = lr_shape
        if self.mode == 'dense':
            if self.flows is None or len(self.flows) != frames:
                raise InvalidArgumentError(f"Dense motion needs {frames} flow fields")
            flows = [np.asarray(f, dtype=np.float64) for f in self.flows]
            for k, f in enumerate(flows):
                if f.shape != (h, w, 2):
                    raise InvalidArgumentError(f"Flow {k} has shape {f.shape}, expected {(h, w, 2)}")
        elif self.mode == 'translational':
            if self.shifts is None:
                shifts = rng.uniform(0.0, 1.0, size=(frames, 2))
                shifts[0] = 0.0
            else:
                shifts = np.asarray(self.shifts, dtype=np.float64).reshape(-1, 2)
                if len(shifts) != frames:
                    raise InvalidArgumentError(f"Got {len(shifts)} shifts for {frames} frames")
            flows = [np.broadcast_to(d, (h, w, 2)).copy() for d in shifts]
        else:
            raise InvalidArgumentError(f"Unknown motion mode '{self.mode}'")

        if np.any(flows[0]):
            raise InvalidArgumentError("Reference frame 0 must have zero motion")
        for k, f in enumerate(flows):
            if np.any(np.abs(f[..., 0]) >= w) or np.any(np.abs(f[..., 1]) >= h):
                raise InvalidArgumentError(f"Motion of frame {k} exceeds the frame extent")
        return flows


@dataclass
class BurstConfig:
    """Formation-model parameters for one synthesized burst."""
    frames: int = 24
    s: int = 2
    psf: Psf = field(default_factory=lambda: gaussian_psf(0.5))
    motion: MotionSpec = field(default_factory=MotionSpec)
    snr: float = 800.0
    seed: int = 0
    decimation: str = 'block'
    boundary: str = 'replicate'

    def validate(self):
        if self.frames < 1:
            raise InvalidArgumentError(f"Frame count must be ≥ 1, got {self.frames}")
        if self.s < 1 or int(self.s) != self.s:
            raise InvalidArgumentError(f"Scale factor must be a positive integer, got {self.s}")
        if not self.snr > 0:
            raise InvalidArgumentError(f"SNR must be positive, got {self.snr}")
        if self.decimation not in DECIMATION_MODES:
            raise InvalidArgumentError(f"Unknown decimation mode '{self.decimation}'")
        _check_boundary(self.boundary, INTERP_MODES)


@dataclass
class Burst:
    """LR frames with reference at index 0, plus optional ground truth."""
    frames: List[np.ndarray]
    true_flows: Optional[List[np.ndarray]] = None
    hr_truth: Optional[np.ndarray] = None
    reference_index: int = 0

    def __post_init__(self):
        if not self.frames:
            raise EmptyBurstError("Burst has no frames")
        self.frames = [as_raster(f) for f in self.frames]
        shape = self.frames[0].shape
        for k, f in enumerate(self.frames):
            if f.shape != shape:
                raise InvalidArgumentError(f"Frame {k} has shape {f.shape}, expected {shape}")
        if self.true_flows is not None:
            if len(self.true_flows) != len(self.frames):
                raise InvalidArgumentError("true_flows must hold one flow per frame")
            self.true_flows = [np.asarray(f, dtype=np.float64) for f in self.true_flows]
            if np.any(self.true_flows[0]):
                raise InvalidArgumentError("Flow of reference frame 0 must be identically zero")
        if self.hr_truth is not None:
            self.hr_truth = as_raster(self.hr_truth)
        self.reference_index = 0

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        return self.frames[0].shape

    @property
    def reference(self):
        return self.frames[0]

    def reordered(self, order):
        """Burst with frames (and flows) in ``order``; the reference stays first."""
        order = list(order)
        if sorted(order) != list(range(len(self.frames))) or order[0] != 0:
            raise InvalidArgumentError(f"Order {order} must be a permutation keeping frame 0 first")
        flows = [self.true_flows[k] for k in order] if self.true_flows is not None else None
        return Burst([self.frames[k] for k in order], true_flows=flows, hr_truth=self.hr_truth)


def _upsample_flow(lr_flow, s):
    """LR flow field evaluated on the HR grid, converted to HR pixel units."""
    h, w, _ = lr_flow.shape
    if np.all(lr_flow == lr_flow[0, 0]):
        return np.broadcast_to(lr_flow[0, 0] * s, (h * s, w * s, 2)).copy()
    yy, xx = np.mgrid[0:h * s, 0:w * s].astype(np.float64) / s
    hr_flow = np.empty((h * s, w * s, 2))
    for c in range(2):
        hr_flow[..., c] = ndimage.map_coordinates(lr_flow[..., c], [yy, xx], order=1, mode='nearest')
    return hr_flow * s


def synthesize_burst(hr, cfg):
    """Degrade an HR scene into a burst of LR frames: warp, blur, decimate, add noise.

    In block mode LR pixel p of frame k averages the HR block starting at
    s·(p + d_k), so its centre sits (s - 1)/2 HR pixels further on.
    """
    hr = as_raster(hr)
    cfg.validate()
    s = int(cfg.s)
    height, width, _ = hr.shape
    if height % s or width % s:
        raise InvalidArgumentError(f"HR scene {height}×{width} is not divisible by s={s}")
    lr_shape = (height // s, width // s)

    seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.frames + 1)
    rng = np.random.default_rng(int(seeds[0]))
    flows = cfg.motion.resolve(cfg.frames, lr_shape, rng)

    hr_psf = cfg.psf.on_grid(s)

    frames = []
    for k, lr_flow in enumerate(flows):
        hr_flow = _upsample_flow(lr_flow, s)
        warped = warp(hr, hr_flow, boundary=cfg.boundary)
        blurred = convolve(warped, hr_psf, boundary=cfg.boundary)
        lr = decimate(blurred, s, mode=cfg.decimation)
        frames.append(add_noise(lr, cfg.snr, int(seeds[k + 1])))
        logger.debug("Frame %d: mean shift (%.3f, %.3f) LR px", k,
                     lr_flow[..., 0].mean(), lr_flow[..., 1].mean())

    logger.info("Synthesized %d frames of %d×%d at s=%d, snr=%s",
                cfg.frames, lr_shape[0], lr_shape[1], s, cfg.snr)
    return Burst(frames=frames, true_flows=flows, hr_truth=hr.copy())
