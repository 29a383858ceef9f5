"""Traditional shift-and-fuse super-resolution.

Pipeline: global translation per frame (phase correlation) → splat every
LR sample onto the HR grid → fill uncovered pixels → Wiener deconvolution
with the HR-grid PSF.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse

from burst_sr.errors import EmptyBurstError, InvalidArgumentError, NoSignalError
from burst_sr.imaging import Psf, as_raster, box_psf, compose_psf, delta_psf, gaussian_psf
from burst_sr.spmc import EPS, fuse, ordered_sum

logger = logging.getLogger(__name__)

# std of the Gaussian weighting applied to the normalized cross-power (cycles/pixel)
CORRELATION_BANDWIDTH = 0.08

INFILL_KERNEL = np.array([[0.25, 0.5, 0.25],
                          [0.5, 1.0, 0.5],
                          [0.25, 0.5, 0.25]])


@dataclass
class ClassicParams:
    """Stage parameters of the shift-and-fuse pipeline.

    ``psf`` is the optics blur in LR pixels. With ``block_integration`` the
    detector's s×s area integration is folded into the HR-grid PSF used for
    deblurring.
    """
    subpixel_refine: bool = True
    wiener_nsr: float = 0.01
    splat_radius: int = 1
    psf: Psf = field(default_factory=lambda: gaussian_psf(0.5))
    block_integration: bool = True
    use_true_flows: bool = True

    def validate(self):
        if not self.wiener_nsr >= 0:
            raise InvalidArgumentError(f"wiener_nsr must be ≥ 0, got {self.wiener_nsr}")
        if self.splat_radius < 1 or int(self.splat_radius) != self.splat_radius:
            raise InvalidArgumentError(f"splat_radius must be a positive integer, got {self.splat_radius}")

    def hr_psf(self, s):
        """PSF of the whole acquisition chain expressed on the HR grid."""
        psf = self.psf.on_grid(s)
        if self.block_integration and s > 1:
            psf = compose_psf(psf, box_psf(s))
        return psf

    @classmethod
    def from_config(cls, section, psf_sigma=0.5, decimation='block'):
        """Build from the ``classic`` config section plus the burst's optics."""
        psf = gaussian_psf(psf_sigma) if psf_sigma else delta_psf()
        params = cls(subpixel_refine=bool(section.get('subpixel_refine', True)),
                     wiener_nsr=float(section.get('wiener_nsr', 0.01)),
                     splat_radius=int(section.get('splat_radius', 1)),
                     psf=psf,
                     block_integration=bool(section.get('block_integration', True)) and decimation == 'block',
                     use_true_flows=bool(section.get('use_true_flows', True)))
        params.validate()
        return params


def _gray(image):
    return as_raster(image).mean(axis=2)


def _peak_offset(minus, center, plus):
    """Sub-sample offset of a peak from three samples; log-parabola when possible."""
    if minus > 0 and center > 0 and plus > 0:
        lm, lc, lp = math.log(minus), math.log(center), math.log(plus)
        denom = lm - 2.0 * lc + lp
        if denom < 0:
            return 0.5 * (lm - lp) / denom
    denom = minus - 2.0 * center + plus
    if denom >= 0:
        return 0.0
    return 0.5 * (minus - plus) / denom


def estimate_translation(ref, frame, subpixel_refine=True):
    """Global (dx, dy) such that ``frame(p) ≈ ref(p + (dx, dy))``.

    Phase correlation of Hann-windowed images; the normalized cross-power is
    weighted by a Gaussian in frequency, which makes the correlation peak a
    sampled Gaussian whose log is fitted by a parabola for the sub-pixel part.
    The sub-pixel residual is measured on the overlap of the two images after
    undoing the integer shift, so an integer translation comes back exactly.
    """
    a = _gray(ref)
    b = _gray(frame)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"Reference {a.shape} and frame {b.shape} differ in shape")
    if np.ptp(a) <= 1e-12 or np.ptp(b) <= 1e-12:
        raise NoSignalError("Cannot estimate motion on a constant image")

    dx, dy = _correlation_peak(a, b, refine=False)
    if not subpixel_refine:
        return dx, dy

    h, w = a.shape
    ix, iy = int(dx), int(dy)
    y0, y1 = max(0, -iy), min(h, h - iy)
    x0, x1 = max(0, -ix), min(w, w - ix)
    if y1 - y0 < 8 or x1 - x0 < 8:
        return _correlation_peak(a, b, refine=True)
    ref_part = a[y0 + iy:y1 + iy, x0 + ix:x1 + ix]
    frame_part = b[y0:y1, x0:x1]
    if np.array_equal(ref_part, frame_part):
        return dx, dy
    if np.ptp(ref_part) <= 1e-12 or np.ptp(frame_part) <= 1e-12:
        return dx, dy
    rx, ry = _correlation_peak(ref_part, frame_part, refine=True)
    return dx + rx, dy + ry


def _correlation_peak(a, b, refine):
    h, w = a.shape
    window = np.outer(np.hanning(h), np.hanning(w))
    fa = np.fft.fft2((a - a.mean()) * window)
    fb = np.fft.fft2((b - b.mean()) * window)
    cross = fa * np.conj(fb)
    magnitude = np.abs(cross)
    if magnitude.max() <= 0:
        raise NoSignalError("Cross-power spectrum is zero")
    fy = np.fft.fftfreq(h)[:, np.newaxis]
    fx = np.fft.fftfreq(w)[np.newaxis, :]
    taper = np.exp(-(fx ** 2 + fy ** 2) / (2.0 * CORRELATION_BANDWIDTH ** 2))
    corr = np.real(np.fft.ifft2(cross / (magnitude + 1e-12 * magnitude.max()) * taper))

    iy, ix = np.unravel_index(np.argmax(corr), corr.shape)
    dy = float(iy - h if iy > h // 2 else iy)
    dx = float(ix - w if ix > w // 2 else ix)
    if refine:
        dy += _peak_offset(corr[(iy - 1) % h, ix], corr[iy, ix], corr[(iy + 1) % h, ix])
        dx += _peak_offset(corr[iy, (ix - 1) % w], corr[iy, ix], corr[iy, (ix + 1) % w])
    return dx, dy


def _as_flow(entry, lr_shape):
    h, w = lr_shape
    flow = np.asarray(entry, dtype=np.float64)
    if flow.shape == (2,):
        return np.broadcast_to(flow, (h, w, 2)).copy()
    if flow.shape != (h, w, 2):
        raise InvalidArgumentError(f"Flow of shape {flow.shape} does not match frames {lr_shape}")
    return flow


def _tent_splat(frames, flows, s, radius):
    """Separable tent splat of half-width ``radius`` HR pixels, per-frame layers."""
    h, w, channels = frames[0].shape
    hr_h, hr_w = h * s, w * s
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    acc_layers = np.empty((len(frames), hr_h * hr_w, channels))
    weight_layers = np.empty((len(frames), hr_h * hr_w))
    offsets = np.arange(-radius + 1, radius + 1)
    for k, (frame, flow) in enumerate(zip(frames, flows)):
        x = s * (xx + flow[..., 0]).ravel()
        y = s * (yy + flow[..., 1]).ravel()
        rows, cols, vals = [], [], []
        for oy in offsets:
            cy = np.floor(y).astype(np.int64) + oy
            wy = np.clip(1.0 - np.abs(y - cy) / radius, 0.0, None) / radius
            for ox in offsets:
                cx = np.floor(x).astype(np.int64) + ox
                wx = np.clip(1.0 - np.abs(x - cx) / radius, 0.0, None) / radius
                ok = (cx >= 0) & (cx < hr_w) & (cy >= 0) & (cy < hr_h)
                rows.append((cy * hr_w + cx)[ok])
                cols.append(np.flatnonzero(ok))
                vals.append((wx * wy)[ok])
        op = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(hr_h * hr_w, h * w))
        acc_layers[k] = op @ frame.reshape(-1, channels)
        weight_layers[k] = op @ np.ones(h * w)
    acc = ordered_sum(acc_layers)
    weight = ordered_sum(weight_layers)
    value = np.zeros_like(acc)
    covered = weight > EPS
    value[covered] = acc[covered] / weight[covered, np.newaxis]
    return value.reshape(hr_h, hr_w, channels), weight.reshape(hr_h, hr_w)


def _infill(image, known):
    """Fill unknown pixels from known 3×3 neighbours, growing inward until none remain."""
    out = image.copy()
    known = known.copy()
    kernel = INFILL_KERNEL[:, :, np.newaxis]
    while not known.all():
        mask = known[:, :, np.newaxis].astype(np.float64)
        num = ndimage.correlate(out * mask, kernel, mode='constant', cval=0.0)
        den = ndimage.correlate(mask, kernel, mode='constant', cval=0.0)[..., 0]
        grow = ~known & (den > 0)
        out[grow] = num[grow] / den[grow, np.newaxis]
        known |= grow
    return out


def shift_and_add(burst, flows, s, radius=1):
    """Accumulate every frame on the s× grid. Returns ``(image, weight)``.

    ``flows`` holds one entry per frame, either a (dx, dy) translation or a
    dense (h, w, 2) flow. HR pixels with no weight are infilled from their
    neighbours and show up as ``weight ≤ 1e-8``.
    """
    if len(burst.frames) == 0:
        raise EmptyBurstError("Burst has no frames")
    if len(flows) != len(burst.frames):
        raise InvalidArgumentError(f"Got {len(flows)} flows for {len(burst.frames)} frames")
    s = int(s)
    if s < 1:
        raise InvalidArgumentError(f"Scale factor must be ≥ 1, got {s}")
    lr_shape = burst.shape[:2]
    dense = [_as_flow(f, lr_shape) for f in flows]

    if radius == 1:
        fused = fuse(burst.frames, dense, s)
        image, weight = fused.value, fused.weight
    else:
        image, weight = _tent_splat(burst.frames, dense, s, radius)

    known = weight > EPS
    if not known.any():
        raise EmptyBurstError("No LR sample landed on the HR grid")
    holes = int(np.count_nonzero(~known))
    if holes:
        logger.info("Shift-and-add: infilling %d uncovered HR pixels", holes)
        image = _infill(image, known)
    return image, weight


def deblur_wiener(image, psf, nsr):
    """Per-channel Wiener filter conj(H)/(|H|² + nsr) on a symmetric 2H×2W extension."""
    if not nsr >= 0:
        raise InvalidArgumentError(f"nsr must be ≥ 0, got {nsr}")
    img = as_raster(image)
    if psf.is_delta:
        return img / (1.0 + nsr)
    height, width, _ = img.shape
    size = psf.kernel.shape[0]
    if size > 2 * height or size > 2 * width:
        raise InvalidArgumentError(f"Kernel {psf.kernel.shape} is larger than the padded image")

    padded = np.pad(img, ((0, height), (0, width), (0, 0)), mode='symmetric')
    kernel = np.zeros(padded.shape[:2])
    kernel[:size, :size] = psf.kernel[::-1, ::-1]
    kernel = np.roll(kernel, (-psf.radius, -psf.radius), axis=(0, 1))
    otf = np.fft.fft2(kernel)
    gain = np.conj(otf) / (np.abs(otf) ** 2 + nsr)

    out = np.empty_like(img)
    for c in range(img.shape[2]):
        restored = np.real(np.fft.ifft2(np.fft.fft2(padded[..., c]) * gain))
        out[..., c] = restored[:height, :width]
    return out


def _catmull_rom_matrix(n, s):
    """(s·n × n) Catmull-Rom interpolation matrix, HR index q at LR position q/s."""
    t = np.arange(n * s) / s
    base = np.floor(t).astype(np.int64)
    u = t - base
    weights = (
        (-u ** 3 + 2 * u ** 2 - u) / 2.0,
        (3 * u ** 3 - 5 * u ** 2 + 2) / 2.0,
        (-3 * u ** 3 + 4 * u ** 2 + u) / 2.0,
        (u ** 3 - u ** 2) / 2.0,
    )
    matrix = np.zeros((n * s, n))
    rows = np.arange(n * s)
    for offset, wgt in zip((-1, 0, 1, 2), weights):
        np.add.at(matrix, (rows, np.clip(base + offset, 0, n - 1)), wgt)
    return matrix


def bicubic_upsample(image, s):
    """Catmull-Rom upsampling by ``s`` with replicated edges."""
    img = as_raster(image)
    if s < 1 or int(s) != s:
        raise InvalidArgumentError(f"Scale factor must be a positive integer, got {s}")
    s = int(s)
    if s == 1:
        return img.copy()
    height, width, _ = img.shape
    my = _catmull_rom_matrix(height, s)
    mx = _catmull_rom_matrix(width, s)
    return np.einsum('Hh,hwc,Ww->HWc', my, img, mx)


def resolve_flows(burst, params):
    """True flows when allowed and present, else one estimated translation per frame."""
    if params.use_true_flows and burst.true_flows is not None:
        return list(burst.true_flows)
    ref = burst.reference
    flows = [(0.0, 0.0)]
    for k, frame in enumerate(burst.frames[1:], start=1):
        dx, dy = estimate_translation(ref, frame, subpixel_refine=params.subpixel_refine)
        logger.debug("Frame %d: estimated shift (%.4f, %.4f)", k, dx, dy)
        flows.append((dx, dy))
    return flows


def block_centred(flows, s, params):
    """Flows moved onto the HR block centres when each LR pixel integrates an s×s block."""
    if not params.block_integration or s == 1:
        return list(flows)
    centre = (s - 1) / (2.0 * s)
    return [np.asarray(flow, dtype=np.float64) + centre for flow in flows]


def classic_sr(burst, s, params=None):
    """Shift-and-fuse super-resolution of ``burst`` by factor ``s``.

    A single-frame burst degenerates to hole infill upsampling followed by
    deblurring.
    """
    params = params or ClassicParams()
    params.validate()
    if s < 1:
        raise InvalidArgumentError(f"Scale factor must be ≥ 1, got {s}")
    flows = block_centred(resolve_flows(burst, params), int(s), params)
    image, _ = shift_and_add(burst, flows, s, radius=params.splat_radius)
    result = deblur_wiener(image, params.hr_psf(int(s)), params.wiener_nsr)
    logger.info("Classic SR: %d frames → %d×%d", len(burst), result.shape[0], result.shape[1])
    return result


def binned_product(burst, flows=None, params=None):
    """Motion-compensated temporal average on the native LR grid."""
    params = params or ClassicParams()
    if flows is None:
        flows = resolve_flows(burst, params)
    image, _ = shift_and_add(burst, flows, 1)
    return image
