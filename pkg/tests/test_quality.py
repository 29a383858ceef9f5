"""Unit tests for the evaluation metrics."""
import math

import numpy as np
import pytest
from scipy import special

from burst_sr.classic_sr import ClassicParams, classic_sr
from burst_sr.data_generator import slanted_edge, target_scene, textured_scene
from burst_sr.errors import (AmbiguousPeakError, InvalidArgumentError, NoEdgeError, StateError,
                             UndefinedCorrelationError)
from burst_sr.imaging import BurstConfig, MotionSpec, convolve, decimate, gaussian_psf, synthesize_burst
from burst_sr.quality import (FWHM_PER_SIGMA, PUBLISHED_FWHM_TABLE, EdgeRoi, NssModel, Roi, aggd_fit, band_means,
                              esf_from_edge, fit_nss_model, fwhm, measure_lsf, mscn, ndvi, nss_features,
                              pearson_corr, power_spectrum, product_comparison, quality_score,
                              roi_reflectance_table, spectral_match, spectrum_gain, sr_ratio, stats_compare,
                              transect, transect_agreement)

EDGE_ROI = EdgeRoi(8, 8, 48, 48)


@pytest.fixture(scope='module')
def nss_model():
    corpus = [textured_scene((128, 128), seed=seed, shapes=6) for seed in range(4)]
    return fit_nss_model(corpus, patch=32)


# ---------------------------------------------------------------------------
# Edges
# ---------------------------------------------------------------------------

def test_esf_of_ideal_step():
    """Test an unblurred edge steps from low to high at the fitted edge line."""
    edge = esf_from_edge(slanted_edge((64, 64), angle_deg=5.0, sigma=0.0), EDGE_ROI)
    values = edge.values
    assert values[0] == pytest.approx(0.2) and values[-1] == pytest.approx(0.8)
    ramp = (values > 0.21) & (values < 0.79)
    assert ramp.sum() <= 3
    crossing = edge.positions[np.argmax(values >= 0.5)]
    assert abs(crossing) <= 0.5
    assert edge.slant_deg == pytest.approx(5.0, abs=1.0)


def test_esf_matches_gaussian_cdf():
    """Test the ESF of a Gaussian-blurred edge against the normal CDF."""
    edge = esf_from_edge(slanted_edge((64, 64), angle_deg=5.0, sigma=1.0), EDGE_ROI)
    expected = 0.2 + 0.6 * special.ndtr(edge.positions / 1.0)
    assert np.max(np.abs(edge.values - expected)) < 0.02 * 0.6


def test_esf_constant_image_has_no_edge():
    """Test a flat ROI is rejected."""
    with pytest.raises(NoEdgeError):
        esf_from_edge(np.full((64, 64), 0.5), EDGE_ROI)


def test_fwhm_examples():
    """Test triangle and Gaussian profiles."""
    assert fwhm([0.0, 1.0, 0.0]) == pytest.approx(1.0)
    x = np.arange(-10.0, 10.0, 0.01)
    assert fwhm(np.exp(-x ** 2 / 2.0), spacing=0.01) == pytest.approx(2.3548, rel=0.01)
    sigma = 0.5944
    assert fwhm(np.exp(-x ** 2 / (2.0 * sigma ** 2)), spacing=0.01) == pytest.approx(1.4, rel=0.01)


def test_fwhm_ambiguous_profiles():
    """Test double peaks and profiles that never fall to half maximum."""
    with pytest.raises(AmbiguousPeakError):
        fwhm([0.0, 1.0, 0.0, 1.0, 0.0])
    with pytest.raises(AmbiguousPeakError):
        fwhm([1.0, 1.0, 0.0])
    with pytest.raises(AmbiguousPeakError):
        fwhm([0.0, 0.0, 0.0])


@pytest.mark.parametrize('angle', [3.0, 5.0, 8.0])
@pytest.mark.parametrize('sigma', [0.5, 1.0, 2.0])
def test_measure_lsf_of_blurred_edge(sigma, angle):
    """Test the measured FWHM of a Gaussian edge is 2√(2ln2)σ."""
    result = measure_lsf(slanted_edge((64, 64), angle_deg=angle, sigma=sigma), EDGE_ROI)
    assert result.fwhm == pytest.approx(FWHM_PER_SIGMA * sigma, rel=0.01)
    assert result.lsf.max() > 0


def test_sr_ratio():
    """Test the published table rows and degenerate inputs."""
    assert round(sr_ratio(3.0, 1.8), 1) == 1.7
    assert round(sr_ratio(4.8, 2.6), 1) == 1.8
    assert sr_ratio(2.0, 2.0) == 1.0
    for band, _, bicubic, sr, published in PUBLISHED_FWHM_TABLE:
        if band != 5:
            assert round(sr_ratio(bicubic, sr), 1) == published
    with pytest.raises(InvalidArgumentError):
        sr_ratio(0.0, 1.0)


# ---------------------------------------------------------------------------
# Power spectrum
# ---------------------------------------------------------------------------

def test_power_spectrum_constant():
    """Test all power of a flat image lands in the DC bin."""
    spec = power_spectrum(np.full((64, 64), 0.3))
    assert spec.power[0] > 0
    np.testing.assert_allclose(spec.power[1:], 0.0, atol=1e-12)


def test_power_spectrum_sinusoid():
    """Test a 0.25 cycles/pixel grating peaks in the bin containing 0.25."""
    x = np.arange(64)
    grating = np.tile(np.sin(2 * np.pi * 0.25 * x), (64, 1))
    spec = power_spectrum(grating)
    peak = int(np.argmax(spec.power[1:])) + 1
    half = 0.5 * 0.5 / 64
    assert spec.frequencies[peak] - half <= 0.25 < spec.frequencies[peak] + half


def test_power_spectrum_white_noise_is_flat(rng):
    """Test white noise has a flat radial profile at its variance."""
    spec = power_spectrum(rng.standard_normal((128, 128)))
    band = slice(8, 64)
    mean = spec.power[band].mean()
    assert mean == pytest.approx(1.0, rel=0.05)
    # neighbouring periodogram values are correlated by the window
    stderr = 2.0 * mean / np.sqrt(spec.counts[band])
    assert np.all(np.abs(spec.power[band] - mean) < 4.0 * stderr)


def test_power_spectrum_energy(hr_scene):
    """Test the windowed Parseval identity."""
    data = hr_scene[..., 0]
    spec = power_spectrum(data)
    window = np.outer(np.hanning(64), np.hanning(64))
    mean = data.mean()
    expected = np.sum(((data - mean) * window) ** 2) / np.sum(window ** 2) + mean ** 2
    assert spec.total_energy == pytest.approx(expected, rel=1e-9)


def test_spectrum_gain():
    """Test identical images and blur."""
    scene = textured_scene((64, 64), seed=5, shapes=6)
    np.testing.assert_array_equal(spectrum_gain(scene, scene), 1.0)
    blurred = convolve(scene, gaussian_psf(2.0))
    ratio = spectrum_gain(blurred, scene)
    counts = power_spectrum(scene).counts
    high = (np.arange(64) >= 40) & (counts > 0)
    assert np.all(ratio[high] < 1.0)
    with pytest.raises(InvalidArgumentError):
        spectrum_gain(scene, scene[:32])


# ---------------------------------------------------------------------------
# Natural scene statistics
# ---------------------------------------------------------------------------

def test_aggd_fit_gaussian(rng):
    """Test unit Gaussian samples give alpha ≈ 2 and equal sides."""
    alpha, sl, sr = aggd_fit(rng.standard_normal(1_000_000))
    assert alpha == pytest.approx(2.0, rel=0.05)
    assert sl == pytest.approx(sr, rel=0.05)


def test_aggd_fit_laplacian(rng):
    """Test Laplacian samples give alpha ≈ 1."""
    alpha, _, _ = aggd_fit(rng.laplace(size=1_000_000))
    assert alpha == pytest.approx(1.0, rel=0.1)


def test_aggd_fit_recovers_parameters(rng):
    """Test self-generated asymmetric samples."""
    alpha, sigma_l, sigma_r = 0.8, 1.0, 2.0
    ratio = math.sqrt(math.gamma(1.0 / alpha) / math.gamma(3.0 / alpha))
    beta_l, beta_r = sigma_l * ratio, sigma_r * ratio
    n = 1_000_000
    magnitude = rng.gamma(1.0 / alpha, 1.0, size=n) ** (1.0 / alpha)
    left = rng.random(n) < beta_l / (beta_l + beta_r)
    samples = np.where(left, -beta_l * magnitude, beta_r * magnitude)
    fit = aggd_fit(samples)
    assert fit[0] == pytest.approx(alpha, rel=0.1)
    assert fit[1] == pytest.approx(sigma_l, rel=0.1)
    assert fit[2] == pytest.approx(sigma_r, rel=0.1)


def test_nss_features_shape_and_constant_image(hr_scene):
    """Test the feature vector length and the flat-image fallback."""
    assert nss_features(hr_scene).shape == (36,)
    flat = nss_features(np.full((32, 32), 0.4))
    assert np.all(np.isfinite(flat))
    assert not mscn(np.full((16, 16), 0.4)).any()
    with pytest.raises(InvalidArgumentError):
        mscn(np.ones((7, 7)))


def test_quality_score_ordering(nss_model):
    """Test blur and noise both move an image away from the pristine statistics."""
    pristine = textured_scene((128, 128), seed=0, shapes=6)
    base = quality_score(pristine, nss_model)
    blurred = quality_score(convolve(pristine, gaussian_psf(2.0)), nss_model)
    noise = np.random.default_rng(8).standard_normal(pristine.shape) * 0.1 * pristine.std()
    noisy = quality_score(pristine + noise, nss_model)
    assert blurred > base
    assert noisy > base


def test_quality_score_blur_is_monotone(nss_model):
    """Test stronger blur scores strictly worse."""
    pristine = textured_scene((128, 128), seed=1, shapes=6)
    scores = [quality_score(pristine, nss_model)]
    scores += [quality_score(convolve(pristine, gaussian_psf(sigma)), nss_model) for sigma in (1.0, 2.0)]
    assert scores[0] < scores[1] < scores[2]


def test_quality_score_needs_fitted_model(hr_scene):
    """Test an unfitted model is a state error."""
    with pytest.raises(StateError):
        quality_score(hr_scene, NssModel())
    with pytest.raises(StateError):
        quality_score(hr_scene, None)


# ---------------------------------------------------------------------------
# Spectral preservation, correlation and products
# ---------------------------------------------------------------------------

def test_spectral_match(rng):
    """Test identical images and one band scaled by 10%."""
    before = rng.random((8, 8, 4)) + 0.1
    rois = [Roi(1, 1, 4, 4), Roi(4, 2, 3, 5)]
    assert spectral_match(before, before, rois) == 0.0

    after = np.repeat(np.repeat(before, 2, axis=0), 2, axis=1)
    after[..., 2] *= 1.1
    assert spectral_match(before, after, rois) == pytest.approx(0.10)
    np.testing.assert_allclose(band_means(after, Roi(2, 2, 8, 8))[[0, 1, 3]], band_means(before, rois[0])[[0, 1, 3]])
    with pytest.raises(InvalidArgumentError):
        spectral_match(before, before, [Roi(0, 0, 0, 4)])


def test_spectral_signatures_survive_super_resolution():
    """Test target band means of a classic SR product stay within 2% of the LR reference."""
    scene, hr_rois = target_scene((96, 96), seed=1)
    burst = synthesize_burst(scene, BurstConfig(frames=8, s=2, psf=gaussian_psf(0.5), motion=MotionSpec(),
                                                snr=math.inf, seed=3))
    sr = classic_sr(burst, 2, ClassicParams())
    lr_rois = {name: Roi(r.row // 2 + 2, r.col // 2 + 2, 8, 8) for name, r in hr_rois.items()}
    assert spectral_match(burst.reference, sr, lr_rois) < 0.02
    table = roi_reflectance_table(sr, burst.reference, lr_rois, 2)
    assert len(table) == 16
    assert table['relative_difference'].max() < 0.02


def test_pearson_corr(rng):
    """Test identity, negation, affine maps and degenerate samples."""
    a = rng.random(50)
    assert pearson_corr(a, a) == pytest.approx(1.0)
    assert pearson_corr(a, -a) == pytest.approx(-1.0)
    assert pearson_corr(a, 3.0 * a + 2.0) == pytest.approx(1.0)
    with pytest.raises(UndefinedCorrelationError):
        pearson_corr(np.ones(5), a[:5])
    with pytest.raises(InvalidArgumentError):
        pearson_corr(a, a[:10])


def test_downsampled_sr_correlates_with_reference():
    """Test the block-averaged SR product correlates with its LR reference."""
    hr = textured_scene((128, 128), seed=2)
    burst = synthesize_burst(hr, BurstConfig(frames=8, s=2, psf=gaussian_psf(0.5), motion=MotionSpec(),
                                             snr=800.0, seed=4))
    sr = classic_sr(burst, 2, ClassicParams())
    assert pearson_corr(decimate(sr, 2, 'block'), burst.reference) >= 0.99


def test_ndvi():
    """Test equal bands, a vegetation pixel and zero denominators."""
    red = np.array([[0.05, 0.2, 0.0]])
    nir = np.array([[0.40, 0.2, 0.0]])
    out = ndvi(red, nir)[0, :, 0]
    assert out[0] == pytest.approx(0.7778, abs=1e-4)
    assert out[1] == 0.0 and out[2] == 0.0
    rng = np.random.default_rng(0)
    values = ndvi(rng.random((10, 10)), rng.random((10, 10)))
    assert np.all((values >= -1.0) & (values <= 1.0))
    with pytest.raises(InvalidArgumentError):
        ndvi(np.ones((2, 2)), np.ones((2, 3)))


def test_transect():
    """Test constant and ramp profiles."""
    assert np.all(transect(np.full((10, 10), 0.3), (1, 1), (8, 6)) == pytest.approx(0.3))
    ramp = np.tile(np.arange(10, dtype=np.float64), (10, 1))
    np.testing.assert_allclose(transect(ramp, (2, 0), (2, 8)), np.arange(9.0))
    np.testing.assert_allclose(transect(ramp, (2, 0), (2, 8), step=2.0), np.arange(0.0, 9.0, 2.0))
    agreement = transect_agreement(np.arange(5.0), np.arange(5.0) + 1.0)
    assert agreement == {'pearson': pytest.approx(1.0), 'mean_abs_diff': pytest.approx(1.0)}


def test_stats_compare():
    """Test identical, published-table and doubled products."""
    a = np.full((4, 4), 3.41)
    assert stats_compare(a, a).relative_difference == 0.0
    assert stats_compare(a, np.full((4, 4), 3.32)).relative_difference == pytest.approx(0.027, abs=5e-4)
    assert stats_compare(np.full((4, 4), 2.0), np.full((4, 4), 1.0)).relative_difference == pytest.approx(1.0)
    mask = np.zeros((4, 4), dtype=bool)
    with pytest.raises(InvalidArgumentError):
        stats_compare(a, a, mask=mask)


def test_product_comparison():
    """Test single-frame, SR and binned products of a flat scene."""
    single = np.full((4, 4), 0.5)
    sr = np.full((8, 8), 0.55)
    binned = np.full((4, 4), 0.5)
    table = product_comparison(single, sr, binned)
    assert list(table['product']) == ['single', 'sr', 'binned']
    assert table.loc[1, 'relative_difference'] == pytest.approx(0.1)
    assert table.loc[2, 'relative_difference'] == 0.0
