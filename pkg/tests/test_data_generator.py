"""Unit tests for synthetic scenes and datasets."""
import numpy as np
import pytest

from burst_sr.data_generator import (SIGNATURES, make_patch_dataset, make_translation_pairs, slanted_edge,
                                     target_scene, textured_scene)
from burst_sr.errors import InvalidArgumentError


def test_textured_scene_range_and_determinism():
    """Test value range, band count and seeding."""
    a = textured_scene((48, 40), seed=3, channels=2)
    assert a.shape == (48, 40, 2)
    assert a.min() >= 0.1 - 1e-12 and a.max() <= 1.0 + 1e-12
    assert np.array_equal(a, textured_scene((48, 40), seed=3, channels=2))
    assert not np.array_equal(a, textured_scene((48, 40), seed=4, channels=2))
    assert not np.array_equal(a[..., 0], a[..., 1])


def test_slanted_edge():
    """Test levels, orientation and the ideal step."""
    edge = slanted_edge((32, 32), angle_deg=5.0, sigma=1.0)
    assert edge.shape == (32, 32, 1)
    assert edge[16, 0, 0] == pytest.approx(0.2, abs=1e-6)
    assert edge[16, -1, 0] == pytest.approx(0.8, abs=1e-6)
    horizontal = slanted_edge((32, 32), sigma=1.0, orientation='horizontal')
    assert horizontal[0, 16, 0] < horizontal[-1, 16, 0]
    step = slanted_edge((32, 32), sigma=0.0)
    assert np.all(np.isclose(step, 0.2) | np.isclose(step, 0.5) | np.isclose(step, 0.8))
    with pytest.raises(InvalidArgumentError):
        slanted_edge(orientation='diagonal')


def test_target_scene_signatures():
    """Test each ROI carries its class signature."""
    scene, rois = target_scene((96, 96), seed=0, texture=0.0)
    assert scene.shape == (96, 96, 4)
    for name, roi in rois.items():
        means = roi.extract(scene).mean(axis=(0, 1))
        np.testing.assert_allclose(means, SIGNATURES[name], atol=1e-6)


def test_make_patch_dataset():
    """Test shapes, truth and independence from the worker count."""
    one = make_patch_dataset(3, patch=8, frames=3, seed=6, workers=1)
    many = make_patch_dataset(3, patch=8, frames=3, seed=6, workers=3)
    assert len(one) == 3
    for a, b in zip(one, many):
        assert len(a) == 3
        assert a.reference.shape == (8, 8, 1)
        assert a.hr_truth.shape == (16, 16, 1)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa, fb)
    assert not np.array_equal(one[0].hr_truth, one[1].hr_truth)


def test_make_translation_pairs():
    """Test pairs obey the warp convention and the shift bound."""
    pairs = make_translation_pairs(4, size=16, max_shift=1.0, seed=1)
    for frame, ref, (dx, dy) in pairs:
        assert frame.shape == ref.shape == (16, 16, 1)
        assert abs(dx) <= 1.0 and abs(dy) <= 1.0
    still = make_translation_pairs(2, size=16, max_shift=0.0, seed=1)
    for frame, ref, shift in still:
        assert shift == (0.0, 0.0)
        np.testing.assert_array_equal(frame, ref)
