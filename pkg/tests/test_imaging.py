"""Unit tests for the burst formation model."""
import math

import numpy as np
import pytest

from burst_sr.errors import EmptyBurstError, InvalidArgumentError
from burst_sr.imaging import (Burst, BurstConfig, MotionSpec, Psf, add_noise, as_raster, bin_gac, box_psf,
                              compose_psf, convolve, decimate, delta_psf, gac_factor, gaussian_psf,
                              mtf_curve, mtf_of_psf, phase_coverage, required_samples, required_shift,
                              sr_ground_resolution, synthesize_burst, warp)
from burst_sr.raster_io import RasterHeader
from tests.conftest import QUARTER_SHIFTS


def test_gaussian_psf_taps():
    """Test Gaussian PSF taps against the closed form."""
    psf = gaussian_psf(0.5, radius=2)
    x = np.arange(-2, 3)
    expected = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * 0.25))
    expected /= expected.sum()
    np.testing.assert_allclose(psf.kernel, expected, rtol=1e-12)
    assert psf.kernel.sum() == pytest.approx(1.0, abs=1e-9)

    narrow = gaussian_psf(1e-6, radius=1)
    assert narrow.kernel[1, 1] == pytest.approx(1.0)
    assert narrow.kernel[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_gaussian_psf_rejects_bad_arguments():
    """Test sigma and radius validation."""
    with pytest.raises(InvalidArgumentError):
        gaussian_psf(0.0)
    with pytest.raises(InvalidArgumentError):
        gaussian_psf(1.0, radius=1)


def test_mtf_of_psf():
    """Test MTF values of delta and Gaussian PSFs."""
    assert mtf_of_psf(delta_psf(), 0.4) == 1.0
    psf = gaussian_psf(0.5)
    assert mtf_of_psf(psf, 0.0) == pytest.approx(1.0)
    expected = math.exp(-2 * math.pi ** 2 * 0.25 * 0.5625)
    assert mtf_of_psf(psf, 0.75) == pytest.approx(expected, abs=1e-3)

    freqs, values = mtf_curve(psf, n=16)
    assert len(freqs) == 16 and freqs[-1] == pytest.approx(0.75)
    assert np.all(np.diff(values) <= 1e-12)


def test_compose_and_box_psf():
    """Test PSF composition and detector box taps."""
    combined = compose_psf(gaussian_psf(0.6), gaussian_psf(0.8))
    assert combined.sigma == pytest.approx(1.0)
    assert combined.kernel.sum() == pytest.approx(1.0)

    box = box_psf(2)
    np.testing.assert_allclose(box.kernel[1], np.array([0.5, 1.0, 0.5]) / 4.0)
    assert box_psf(3).kernel[1, 1] == pytest.approx(1.0 / 9.0)


def test_warp_identity_and_integer_shift(rng):
    """Test zero and integer flows."""
    img = rng.random((20, 24, 2))
    assert np.array_equal(warp(img, np.zeros((20, 24, 2))), img)

    flow = np.zeros((20, 24, 2))
    flow[..., 0] = 3.0
    flow[..., 1] = -2.0
    out = warp(img, flow)
    np.testing.assert_array_equal(out[2:, :-3], img[:-2, 3:])


def test_warp_half_pixel_on_ramp():
    """Test bilinear warp is exact on an affine image."""
    ramp = np.tile(np.arange(16, dtype=np.float64), (8, 1))
    flow = np.zeros((8, 16, 2))
    flow[..., 0] = 0.5
    out = warp(ramp, flow)[..., 0]
    np.testing.assert_allclose(out[:, :-1], ramp[:, :-1] + 0.5, atol=1e-12)


def test_warp_rejects_bad_boundary():
    """Test unknown boundary policy."""
    with pytest.raises(InvalidArgumentError):
        warp(np.ones((4, 4)), np.ones((4, 4, 2)) * 0.5, boundary='wrap')


def test_convolve():
    """Test delta identity and constant preservation."""
    img = np.arange(25, dtype=np.float64).reshape(5, 5)
    np.testing.assert_array_equal(convolve(img, delta_psf())[..., 0], img)

    uniform = Psf(np.ones((3, 3)))
    assert convolve(np.ones((3, 3)), uniform)[1, 1, 0] == pytest.approx(1.0)


def test_decimate():
    """Test block averaging and point sampling."""
    assert decimate(np.array([[1.0, 2.0], [3.0, 4.0]]), 2)[0, 0, 0] == 2.5
    img = np.random.default_rng(0).random((6, 6, 1))
    np.testing.assert_array_equal(decimate(img, 1), img)
    np.testing.assert_allclose(decimate(np.full((9, 9), 0.3), 3), 0.3)
    np.testing.assert_array_equal(decimate(img, 2, mode='point'), img[::2, ::2])
    with pytest.raises(InvalidArgumentError):
        decimate(np.ones((5, 5)), 2)


def test_add_noise():
    """Test noiseless, deterministic and calibrated noise."""
    img = np.full((512, 512), 100.0)
    assert np.array_equal(add_noise(img, math.inf, 3), as_raster(img))
    a = add_noise(img, 800.0, 3)
    b = add_noise(img, 800.0, 3)
    assert np.array_equal(a, b)
    assert np.std(a - 100.0) == pytest.approx(0.125, rel=0.05)
    with pytest.raises(InvalidArgumentError):
        add_noise(img, 0.0, 3)


def test_synthesize_identity_config(hr_scene):
    """Test a single-frame identity burst reproduces the scene."""
    cfg = BurstConfig(frames=1, s=1, psf=delta_psf(), motion=MotionSpec(), snr=math.inf, seed=0)
    burst = synthesize_burst(hr_scene, cfg)
    assert len(burst) == 1
    assert np.array_equal(burst.frames[0], hr_scene)


def test_synthesize_polyphase(polyphase_burst, hr_scene):
    """Test quarter-phase frames are the polyphase components of the scene."""
    frames = polyphase_burst.frames
    np.testing.assert_array_equal(frames[0], hr_scene[0::2, 0::2])
    np.testing.assert_array_equal(frames[1], hr_scene[0::2, 1::2])
    np.testing.assert_array_equal(frames[2], hr_scene[1::2, 0::2])
    np.testing.assert_array_equal(frames[3], hr_scene[1::2, 1::2])
    assert not np.any(polyphase_burst.true_flows[0])


def test_synthesize_block_is_warp_blur_decimate(hr_scene):
    """Test block-mode frames are exactly the block averages of the warped scene."""
    cfg = BurstConfig(frames=2, s=2, psf=delta_psf(), motion=MotionSpec(shifts=[(0.0, 0.0), (0.5, 0.0)]),
                      snr=math.inf, seed=0, decimation='block')
    burst = synthesize_burst(hr_scene, cfg)
    np.testing.assert_array_equal(burst.frames[0], decimate(hr_scene, 2))
    moved = np.concatenate([hr_scene[:, 1:], hr_scene[:, -1:]], axis=1)
    np.testing.assert_allclose(burst.frames[1], decimate(moved, 2), atol=1e-15)


def test_synthesize_snr():
    """Test the measured SNR of a flat scene matches the configured SNR."""
    cfg = BurstConfig(frames=2, s=2, snr=800.0, seed=11)
    burst = synthesize_burst(np.full((128, 128), 0.5), cfg)
    frame = burst.frames[1]
    assert frame.mean() / frame.std() == pytest.approx(800.0, rel=0.05)


def test_synthesize_is_deterministic(hr_scene):
    """Test same seed, same burst."""
    cfg = BurstConfig(frames=5, s=2, seed=42)
    a = synthesize_burst(hr_scene, cfg)
    b = synthesize_burst(hr_scene, cfg)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa, fb)


def test_synthesize_rejects_bad_config(hr_scene):
    """Test invalid burst configurations."""
    with pytest.raises(InvalidArgumentError):
        synthesize_burst(hr_scene, BurstConfig(frames=0))
    with pytest.raises(InvalidArgumentError):
        synthesize_burst(hr_scene[:63], BurstConfig(frames=2, s=2))
    with pytest.raises(InvalidArgumentError):
        synthesize_burst(hr_scene, BurstConfig(frames=2, motion=MotionSpec(shifts=[(0.2, 0.0), (0.5, 0.5)])))


def test_sampling_requirements():
    """Test sample count and shift step per scale factor."""
    assert (required_samples(2), required_shift(2)) == (4, 0.5)
    assert (required_samples(1), required_shift(1)) == (1, 1.0)
    assert required_samples(3) == 9
    assert required_shift(3) == pytest.approx(1.0 / 3.0)


def test_phase_coverage():
    """Test phase grid occupancy."""
    full = phase_coverage(QUARTER_SHIFTS, 2)
    assert full.feasible and full.occupancy.sum() == 4

    degenerate = phase_coverage([(0.0, 0.0)] * 24, 2)
    assert not degenerate.feasible
    assert degenerate.occupancy[0, 0] == 24
    assert (0, 1) in degenerate.missing_cells

    shifts = np.random.default_rng(3).uniform(0, 1, size=(24, 2))
    assert phase_coverage(shifts, 2).occupancy.sum() == 24


def test_decimate_then_bin_gac_composes(rng):
    """Test decimating by s then binning by f equals decimating by s·f."""
    img = rng.random((36, 24, 2))
    np.testing.assert_allclose(bin_gac(decimate(img, 2), 3), decimate(img, 6), atol=1e-15)
    np.testing.assert_allclose(bin_gac(decimate(img, 3), 2), decimate(img, 6), atol=1e-15)


def test_bin_gac():
    """Test LAC to GAC binning and resolution bookkeeping."""
    block = np.arange(1, 10, dtype=np.float64).reshape(3, 3)
    assert bin_gac(block)[0, 0, 0] == 5.0
    np.testing.assert_allclose(bin_gac(np.full((6, 6), 2.0)), 2.0)
    assert RasterHeader(6, 6, 1, pixel_size_m=360.0).binned(3).pixel_size_m == 1080.0
    assert gac_factor('OCM-3') == 3.0
    assert sr_ground_resolution(360.0, 2) == 180.0
    with pytest.raises(InvalidArgumentError):
        gac_factor('MODIS')


def test_burst_validation_and_reorder(polyphase_burst):
    """Test Burst invariants and reordering."""
    with pytest.raises(EmptyBurstError):
        Burst(frames=[])
    with pytest.raises(InvalidArgumentError):
        Burst(frames=[np.ones((4, 4)), np.ones((4, 5))])
    with pytest.raises(InvalidArgumentError):
        Burst(frames=[np.ones((4, 4))], true_flows=[np.ones((4, 4, 2))])

    reordered = polyphase_burst.reordered([0, 3, 1, 2])
    assert np.array_equal(reordered.frames[1], polyphase_burst.frames[3])
    with pytest.raises(InvalidArgumentError):
        polyphase_burst.reordered([1, 0, 2, 3])
