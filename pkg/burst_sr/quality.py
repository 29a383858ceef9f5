"""Evaluation battery for super-resolved products.

Sharpness from slanted edges (ESF → LSF → FWHM, SR ratio), radially
averaged power spectra, a natural-scene-statistics distance score, spectral
signature preservation over ROIs, Pearson correlation, NDVI transects and
mean/std product comparison.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy import ndimage, special, stats
from scipy.interpolate import CubicSpline

from burst_sr.errors import (AmbiguousPeakError, InvalidArgumentError, NoEdgeError, StateError,
                             UndefinedCorrelationError)
from burst_sr.imaging import as_raster, decimate

logger = logging.getLogger(__name__)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# local variance at or below this counts as a flat window in mscn
FLAT_VARIANCE = 1e-12

# band, FWHM @360 m (native), bicubic @180 m, SR @180 m, SR ratio
PUBLISHED_FWHM_TABLE = (
    (1, 1.4, 3.0, 1.8, 1.7),
    (2, 1.4, 3.2, 1.9, 1.7),
    (3, 1.5, 3.3, 2.0, 1.6),
    (4, 1.7, 3.7, 2.1, 1.8),
    (5, 1.6, 3.5, 2.1, 1.6),
    (6, 1.4, 3.1, 2.0, 1.6),
    (7, 1.4, 3.4, 2.0, 1.7),
    (8, 1.6, 3.6, 2.1, 1.7),
    (9, 1.6, 3.4, 2.1, 1.6),
    (10, 1.7, 3.8, 2.2, 1.7),
    (11, 2.0, 4.3, 2.5, 1.7),
    (12, 1.8, 4.1, 2.4, 1.7),
    (13, 2.2, 4.8, 2.6, 1.8),
)


def _gray(image):
    return as_raster(image).mean(axis=2)


# ---------------------------------------------------------------------------
# Regions of interest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Roi:
    """Axis-aligned rectangle in pixel coordinates."""
    row: int
    col: int
    height: int
    width: int

    def scaled(self, s):
        """The same ground area on an s× finer grid."""
        return Roi(self.row * s, self.col * s, self.height * s, self.width * s)

    def extract(self, data):
        if self.height <= 0 or self.width <= 0:
            raise InvalidArgumentError(f"ROI {self} is empty")
        if self.row < 0 or self.col < 0 or self.row + self.height > data.shape[0] \
                or self.col + self.width > data.shape[1]:
            raise InvalidArgumentError(f"ROI {self} lies outside the {data.shape[0]}×{data.shape[1]} image")
        return data[self.row:self.row + self.height, self.col:self.col + self.width]


@dataclass(frozen=True)
class EdgeRoi(Roi):
    """ROI crossed by a near-vertical or near-horizontal slanted edge."""
    orientation: str = 'vertical'


# ---------------------------------------------------------------------------
# Edge sharpness
# ---------------------------------------------------------------------------

@dataclass
class EdgeProfile:
    """Supersampled edge spread function at bin centres (pixels from the edge)."""
    positions: np.ndarray
    values: np.ndarray
    bin_size: float
    slant_deg: float


@dataclass
class LsfResult:
    esf: np.ndarray
    lsf: np.ndarray
    fwhm: float
    positions: np.ndarray
    lsf_positions: np.ndarray
    bin_size: float
    raw_fwhm: float


def esf_from_edge(image, roi, bin_size=0.25):
    """Slanted-edge ESF: per-row gradient centroids → fitted line → binned distances."""
    data = roi.extract(_gray(image))
    if getattr(roi, 'orientation', 'vertical') == 'horizontal':
        data = data.T
    rows, cols = data.shape
    if rows < 2 or cols < 4:
        raise InvalidArgumentError(f"Edge ROI {rows}×{cols} is too small")

    diffs = np.abs(np.diff(data, axis=1))
    totals = diffs.sum(axis=1)
    # noise from row-to-row differences, which an edge near the column axis barely touches
    noise = 1.4826 * np.median(np.abs(np.diff(data, axis=0))) / math.sqrt(2.0)
    quarter = max(1, cols // 4)
    contrast = abs(data[:, -quarter:].mean() - data[:, :quarter].mean())
    if contrast <= 1e-12 or contrast < 5.0 * noise or np.any(totals <= 0):
        raise NoEdgeError(f"No edge found in ROI {roi} (contrast {contrast:.3g}, noise {noise:.3g})")

    centroids = diffs @ (np.arange(cols - 1) + 0.5) / totals
    row_idx = np.arange(rows, dtype=np.float64)
    slope, intercept = np.polyfit(row_idx, centroids, 1)
    slant = math.degrees(math.atan(abs(slope)))
    if not 2.0 <= slant <= 10.0:
        logger.warning("Edge slant %.2f° is outside the 2-10° range", slant)

    # whole number of phase cycles, so every sub-pixel phase is sampled equally often
    cycles = math.floor(rows * abs(slope))
    used = min(rows, int(round(cycles / abs(slope)))) if cycles >= 1 else rows
    first = (rows - used) // 2
    data = data[first:first + used]
    row_idx = row_idx[first:first + used]

    norm = math.sqrt(1.0 + slope * slope)
    line = slope * row_idx + intercept
    dist = (np.arange(cols)[np.newaxis, :] - line[:, np.newaxis]) / norm
    reach_left = line.min() / norm
    reach_right = (cols - 1 - line.max()) / norm
    k_min = math.ceil(-reach_left / bin_size)
    k_max = math.floor(reach_right / bin_size) - 1
    if k_max - k_min < 4:
        raise NoEdgeError(f"Edge in ROI {roi} is too close to the ROI border")

    k = np.floor(dist / bin_size).astype(np.int64)
    inside = (k >= k_min) & (k <= k_max)
    n_bins = k_max - k_min + 1
    counts = np.bincount(k[inside] - k_min, minlength=n_bins)
    sums = np.bincount(k[inside] - k_min, weights=data[inside], minlength=n_bins)
    spread = np.bincount(k[inside] - k_min, weights=dist[inside], minlength=n_bins)
    filled = counts > 0
    # each bin sits at the mean distance of its samples, not at its centre
    positions = spread[filled] / counts[filled]
    values = sums[filled] / counts[filled]
    return EdgeProfile(positions=positions, values=values, bin_size=bin_size, slant_deg=slant)


def fwhm(profile, spacing=1.0):
    """Width between the half-maximum crossings, by linear interpolation."""
    p = np.asarray(profile, dtype=np.float64).ravel()
    if p.size < 3:
        raise AmbiguousPeakError("Profile needs at least 3 samples")
    peak = float(p.max())
    if not peak > 0:
        raise AmbiguousPeakError("Profile has no positive peak")
    half = peak / 2.0
    above = p >= half
    starts = np.flatnonzero(np.diff(above.astype(np.int8)) == 1)
    n_runs = len(starts) + (1 if above[0] else 0)
    if n_runs > 1:
        raise AmbiguousPeakError(f"Profile has {n_runs} separate regions above half maximum")
    left = int(np.argmax(above))
    right = len(p) - 1 - int(np.argmax(above[::-1]))
    if left == 0 or right == len(p) - 1:
        raise AmbiguousPeakError("Profile does not fall below half maximum on both sides")
    x_left = (left - 1) + (half - p[left - 1]) / (p[left] - p[left - 1])
    x_right = right + (p[right] - half) / (p[right] - p[right + 1])
    return float((x_right - x_left) * spacing)


def measure_lsf(image, roi, bin_size=0.25, refine=0.025):
    """ESF → LSF → FWHM in pixels of ``image``.

    The LSF is refined with a cubic spline; the variance added by the bin
    averaging and the finite difference (two boxes of width ``bin_size``)
    is removed from the reported FWHM.
    """
    edge = esf_from_edge(image, roi, bin_size=bin_size)
    esf = edge.values
    if esf[-1] < esf[0]:
        esf = -esf
    steps = np.diff(edge.positions)
    lsf = np.diff(esf) / steps
    lsf_positions = edge.positions[:-1] + steps / 2.0

    spline = CubicSpline(lsf_positions, lsf)
    fine = np.arange(lsf_positions[0], lsf_positions[-1], refine)
    raw = fwhm(spline(fine), spacing=refine)
    broadening = 8.0 * math.log(2.0) * 2.0 * bin_size ** 2 / 12.0
    corrected = math.sqrt(raw * raw - broadening) if raw * raw > broadening else raw
    return LsfResult(esf=esf, lsf=lsf, fwhm=corrected, positions=edge.positions,
                     lsf_positions=lsf_positions, bin_size=bin_size, raw_fwhm=raw)


def sr_ratio(fwhm_bicubic, fwhm_sr):
    """Sharpness gain: FWHM after interpolation over FWHM after super-resolution."""
    if not (fwhm_bicubic > 0 and fwhm_sr > 0):
        raise InvalidArgumentError(f"FWHMs must be positive, got {fwhm_bicubic} and {fwhm_sr}")
    return fwhm_bicubic / fwhm_sr


# ---------------------------------------------------------------------------
# Power spectrum
# ---------------------------------------------------------------------------

@dataclass
class RadialSpectrum:
    """Mean power per radial frequency bin; ``total_energy`` sums the whole 2-D plane."""
    frequencies: np.ndarray
    power: np.ndarray
    counts: np.ndarray
    total_energy: float


def power_spectrum(image, bins=64):
    """Hann-windowed periodogram radially averaged over [0, 0.5] cycles/pixel.

    Power is normalized so the plane sums (divided by pixel count) to the
    window-weighted variance plus mean²; the mean² term sits in the DC bin.
    """
    data = _gray(image)
    h, w = data.shape
    mean = float(data.mean())
    window = np.outer(np.hanning(h), np.hanning(w))
    norm = float(np.sum(window ** 2))
    if norm <= 0:
        raise InvalidArgumentError(f"Image {h}×{w} is too small for a Hann window")
    spectrum = np.abs(np.fft.fft2((data - mean) * window)) ** 2 / norm
    spectrum[0, 0] += h * w * mean * mean

    fy = np.fft.fftfreq(h)[:, np.newaxis]
    fx = np.fft.fftfreq(w)[np.newaxis, :]
    radius = np.sqrt(fx ** 2 + fy ** 2)
    idx = np.floor(radius / 0.5 * bins).astype(np.int64)
    inside = idx < bins
    counts = np.bincount(idx[inside], minlength=bins)
    sums = np.bincount(idx[inside], weights=spectrum[inside], minlength=bins)
    power = np.zeros(bins)
    np.divide(sums, counts, out=power, where=counts > 0)
    frequencies = (np.arange(bins) + 0.5) * 0.5 / bins
    return RadialSpectrum(frequencies=frequencies, power=power, counts=counts,
                          total_energy=float(spectrum.sum() / (h * w)))


def spectrum_gain(sr, baseline, bins=64):
    """Per-bin power ratio sr/baseline (1 where both are zero)."""
    a = as_raster(sr)
    b = as_raster(baseline)
    if a.shape[:2] != b.shape[:2]:
        raise InvalidArgumentError(f"Shapes differ: {a.shape} vs {b.shape}")
    pa = power_spectrum(a, bins).power
    pb = power_spectrum(b, bins).power
    ratio = np.ones(bins)
    nonzero = pb > 0
    ratio[nonzero] = pa[nonzero] / pb[nonzero]
    ratio[~nonzero & (pa > 0)] = np.inf
    return ratio


# ---------------------------------------------------------------------------
# Natural scene statistics
# ---------------------------------------------------------------------------

def mscn(image, sigma=7.0 / 6.0):
    """Mean-subtracted contrast-normalized coefficients over a 7×7 Gaussian window."""
    data = _gray(image)
    if data.shape[0] <= 7 or data.shape[1] <= 7:
        raise InvalidArgumentError(f"Image {data.shape} is not larger than the 7×7 window")
    truncate = 3.0 / sigma
    mu = ndimage.gaussian_filter(data, sigma, truncate=truncate, mode='nearest')
    var = ndimage.gaussian_filter(data * data, sigma, truncate=truncate, mode='nearest') - mu * mu
    residual = np.where(np.abs(var) <= FLAT_VARIANCE, 0.0, data - mu)
    return residual / (np.sqrt(np.abs(var)) + 1.0)


def _rho(alpha):
    return np.exp(2.0 * special.gammaln(2.0 / alpha) - special.gammaln(1.0 / alpha)
                  - special.gammaln(3.0 / alpha))


_ALPHA_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
_RHO_GRID = _rho(_ALPHA_GRID)


def _invert_rho(target):
    """Shape parameter alpha with rho(alpha) = target, by lookup then bisection."""
    if target <= _RHO_GRID[0]:
        return float(_ALPHA_GRID[0])
    if target >= _RHO_GRID[-1]:
        return float(_ALPHA_GRID[-1])
    i = int(np.searchsorted(_RHO_GRID, target))
    lo, hi = _ALPHA_GRID[i - 1], _ALPHA_GRID[i]
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _rho(mid) < target:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


def aggd_fit(samples):
    """Asymmetric generalized Gaussian fit by moment matching: (alpha, sigma_left, sigma_right)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    left = x[x < 0]
    right = x[x > 0]
    if left.size == 0 and right.size == 0:
        return 2.0, 0.0, 0.0
    sigma_l = math.sqrt(np.mean(left ** 2)) if left.size else 0.0
    sigma_r = math.sqrt(np.mean(right ** 2)) if right.size else 0.0
    if sigma_l == 0.0 or sigma_r == 0.0:
        sigma_l = sigma_r = max(sigma_l, sigma_r)
    gamma_hat = sigma_l / sigma_r
    r_hat = np.mean(np.abs(x)) ** 2 / np.mean(x ** 2)
    big_r = r_hat * (gamma_hat ** 3 + 1) * (gamma_hat + 1) / (gamma_hat ** 2 + 1) ** 2
    return _invert_rho(big_r), sigma_l, sigma_r


def _pair_products(c):
    """Products of each MSCN coefficient with its right, lower and two diagonal neighbours."""
    return (c[:, :-1] * c[:, 1:],
            c[:-1, :] * c[1:, :],
            c[:-1, :-1] * c[1:, 1:],
            c[:-1, 1:] * c[1:, :-1])


def _scale_features(coeffs):
    alpha, sl, sr = aggd_fit(coeffs)
    feats = [alpha, (sl * sl + sr * sr) / 2.0]
    for product in _pair_products(coeffs):
        alpha, sl, sr = aggd_fit(product)
        eta = (sr - sl) * math.exp(special.gammaln(2.0 / alpha) - special.gammaln(1.0 / alpha)) \
            * math.sqrt(math.exp(special.gammaln(1.0 / alpha) - special.gammaln(3.0 / alpha)))
        feats += [alpha, eta, sl * sl, sr * sr]
    return feats


def _stretch(gray):
    lo, hi = gray.min(), gray.max()
    if hi <= lo:
        return np.zeros_like(gray)
    return 255.0 * (gray - lo) / (hi - lo)


def _features(gray255):
    feats = []
    current = gray255
    for scale in range(2):
        feats += _scale_features(mscn(current))
        if scale == 0:
            h, w = current.shape
            current = decimate(current[:h - h % 2, :w - w % 2], 2)[..., 0]
    return np.array(feats)


def nss_features(image):
    """36 NSS features (18 per scale, 2 scales) of the 8-bit-stretched image."""
    return _features(_stretch(_gray(image)))


def _patch_features(image, patch):
    gray = _stretch(_gray(image))
    h, w = gray.shape
    if h < patch or w < patch:
        return _features(gray)[np.newaxis, :]
    rows = []
    for top in range(0, h - patch + 1, patch):
        for left in range(0, w - patch + 1, patch):
            rows.append(_features(gray[top:top + patch, left:left + patch]))
    return np.array(rows)


@dataclass
class NssModel:
    """Mean and covariance of NSS patch features of a pristine corpus."""
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    regularization: float = 1e-3
    patch: int = 32
    samples: int = 0

    @property
    def fitted(self):
        return self.mean is not None and self.cov is not None


def fit_nss_model(images, patch=32, regularization=1e-3):
    """Fit the pristine model on non-overlapping ``patch``×``patch`` tiles."""
    feats = np.vstack([_patch_features(img, patch) for img in images])
    if len(feats) < 2:
        raise InvalidArgumentError("NSS model needs at least two patches")
    cov = np.cov(feats, rowvar=False)
    logger.info("Fitted NSS model on %d patches", len(feats))
    return NssModel(mean=feats.mean(axis=0), cov=(cov + cov.T) / 2.0,
                    regularization=regularization, patch=patch, samples=len(feats))


def quality_score(image, model):
    """Mahalanobis distance of the image's mean patch features to the model (lower is better)."""
    if model is None or not model.fitted:
        raise StateError("quality_score needs a fitted NssModel")
    vec = _patch_features(image, model.patch).mean(axis=0)
    d = vec - model.mean
    dim = len(d)
    ridge = model.regularization * max(np.trace(model.cov) / dim, 1e-12)
    inv = np.linalg.pinv(model.cov + ridge * np.eye(dim))
    return float(math.sqrt(max(d @ inv @ d, 0.0)))


# ---------------------------------------------------------------------------
# Spectral preservation, correlation and products
# ---------------------------------------------------------------------------

def band_means(image, roi):
    """Per-channel mean inside ``roi``."""
    return roi.extract(as_raster(image)).mean(axis=(0, 1))


def _roi_list(rois):
    return list(rois.values()) if isinstance(rois, dict) else list(rois)


def spectral_match(before, after, rois, s=None):
    """Max relative deviation of ROI band means; ROIs are on the ``before`` grid."""
    a = as_raster(before)
    b = as_raster(after)
    if s is None:
        s = b.shape[0] // a.shape[0]
    worst = 0.0
    for roi in _roi_list(rois):
        ref = band_means(a, roi)
        new = band_means(b, roi.scaled(s))
        diff = np.abs(new - ref)
        with np.errstate(divide='ignore', invalid='ignore'):
            rel = np.where(ref != 0, diff / np.abs(ref), np.where(diff == 0, 0.0, np.inf))
        worst = max(worst, float(rel.max()))
    return worst


def pearson_corr(a, b):
    """Pearson correlation coefficient of two equally long sample sets."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise InvalidArgumentError(f"Need two equal-length samples of size ≥ 2, got {x.size} and {y.size}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("Correlation is undefined for zero-variance samples")
    r, _ = stats.pearsonr(x, y)
    return float(np.clip(r, -1.0, 1.0))


def ndvi(red, nir):
    """(nir − red) / (nir + red), 0 where the denominator vanishes."""
    r = as_raster(red)
    n = as_raster(nir)
    if r.shape != n.shape:
        raise InvalidArgumentError(f"Red {r.shape} and NIR {n.shape} differ in shape")
    total = n + r
    out = np.zeros_like(total)
    np.divide(n - r, total, out=out, where=total != 0)
    return out


def transect(image, start, end, step=1.0):
    """Bilinear samples along the line ``start`` → ``end`` (row, col), ``step`` pixels apart."""
    img = as_raster(image)
    (r0, c0), (r1, c1) = start, end
    length = math.hypot(r1 - r0, c1 - c0)
    n = int(math.floor(length / step + 1e-9)) + 1
    t = np.arange(n) * step / length if length > 0 else np.zeros(1)
    rows = r0 + t * (r1 - r0)
    cols = c0 + t * (c1 - c0)
    profile = np.stack([ndimage.map_coordinates(img[..., c], [rows, cols], order=1, mode='nearest')
                        for c in range(img.shape[2])], axis=1)
    return profile[:, 0] if img.shape[2] == 1 else profile


def transect_agreement(profile_a, profile_b):
    """Correlation and mean absolute difference of two matched transects."""
    a = np.asarray(profile_a, dtype=np.float64).ravel()
    b = np.asarray(profile_b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise InvalidArgumentError(f"Transects differ in length: {a.size} vs {b.size}")
    return {'pearson': pearson_corr(a, b), 'mean_abs_diff': float(np.mean(np.abs(a - b)))}


@dataclass
class StatsComparison:
    mean_a: float
    mean_b: float
    std_a: float
    std_b: float
    relative_difference: float

    def as_dict(self):
        return dict(self.__dict__)


def stats_compare(a, b, mask=None):
    """Masked mean/std of two products and |mean_a − mean_b| / |mean_b|."""
    x = as_raster(a)
    y = as_raster(b)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"Shapes differ: {x.shape} vs {y.shape}")
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:2]:
        raise InvalidArgumentError(f"Mask {mask.shape} does not match image {x.shape[:2]}")
    if not mask.any():
        raise InvalidArgumentError("Mask selects no pixels")
    xs, ys = x[mask], y[mask]
    mean_a, mean_b = float(xs.mean()), float(ys.mean())
    rel = abs(mean_a - mean_b) / abs(mean_b) if mean_b != 0 else (0.0 if mean_a == 0 else math.inf)
    return StatsComparison(mean_a, mean_b, float(xs.std()), float(ys.std()), rel)


def roi_reflectance_table(sr, lr, rois, s):
    """Per-ROI, per-band means of the SR and LR products side by side."""
    records = []
    named = rois.items() if isinstance(rois, dict) else enumerate(rois)
    for name, roi in named:
        sr_means = band_means(sr, roi.scaled(s))
        lr_means = band_means(lr, roi)
        for band, (m_sr, m_lr) in enumerate(zip(sr_means, lr_means)):
            records.append({'roi': str(name), 'band': band, 'sr_mean': float(m_sr),
                            'lr_mean': float(m_lr),
                            'relative_difference': abs(m_sr - m_lr) / abs(m_lr) if m_lr else 0.0})
    return pd.DataFrame(records)


def product_comparison(single, sr, binned, mask=None):
    """Mean/std of single-frame, super-resolved and binned products (LR-grid mask)."""
    single = as_raster(single)
    sr = as_raster(sr)
    binned = as_raster(binned)
    s = sr.shape[0] // single.shape[0]
    if mask is None:
        mask = np.ones(single.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    sr_mask = np.repeat(np.repeat(mask, s, axis=0), s, axis=1)
    records = []
    for name, product, m in (('single', single, mask), ('sr', sr, sr_mask), ('binned', binned, mask)):
        if not m.any():
            raise InvalidArgumentError("Mask selects no pixels")
        values = product[m]
        records.append({'product': name, 'mean': float(values.mean()), 'std': float(values.std())})
    table = pd.DataFrame(records)
    base = table.loc[0, 'mean']
    table['relative_difference'] = (table['mean'] - base).abs() / abs(base) if base else 0.0
    return table
