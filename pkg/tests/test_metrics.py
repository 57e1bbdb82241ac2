import math

import numpy as np
import pytest

from textsr.metrics import PSNR_INFINITE, luma_bt601, no_reference_scores, psnr, ssim

from helpers import brute_force_psnr, brute_force_ssim

# Frozen closed form: 10 * log10(255^2) for unit luma MSE.
PSNR_UNIT_DIFF_DB = 48.1308036086791


def random_uint8(shape, seed):
    return np.random.default_rng(seed).integers(0, 256, size=shape).astype(np.uint8)


def test_psnr_identical_images_sentinel():
    img = random_uint8((16, 16, 3), 0)
    assert psnr(img, img) == PSNR_INFINITE
    assert math.isinf(psnr(img, img))


def test_psnr_unit_luma_difference():
    ref = np.full((12, 12, 3), 100, dtype=np.uint8)
    test = np.full((12, 12, 3), 101, dtype=np.uint8)
    assert psnr(ref, test) == pytest.approx(PSNR_UNIT_DIFF_DB, abs=1e-9)


def test_psnr_symmetry():
    a = random_uint8((16, 16, 3), 1)
    b = random_uint8((16, 16, 3), 2)
    assert psnr(a, b) == pytest.approx(psnr(b, a), rel=1e-15)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identical_images_is_one():
    img = random_uint8((16, 16, 3), 3)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_symmetry():
    a = random_uint8((16, 16, 3), 4)
    b = random_uint8((16, 16, 3), 5)
    assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)


def test_ssim_window_size_check():
    with pytest.raises(ValueError):
        ssim(np.zeros((6, 6, 3)), np.zeros((6, 6, 3)))


def test_ssim_two_block_pattern_matches_brute_force():
    base = np.zeros((16, 16, 3), dtype=np.uint8)
    base[:8] = 40
    base[8:] = 200
    inverted = 255 - base
    assert ssim(base, inverted) == pytest.approx(brute_force_ssim(base, inverted),
                                                 abs=1e-9)


def test_metrics_match_brute_force_on_random_pairs():
    for seed in range(12):
        a = random_uint8((12, 14, 3), 100 + seed)
        b = random_uint8((12, 14, 3), 200 + seed)
        assert psnr(a, b) == pytest.approx(brute_force_psnr(a, b), abs=1e-9)
        assert ssim(a, b) == pytest.approx(brute_force_ssim(a, b), abs=1e-6)


def test_ssim_range():
    for seed in range(6):
        a = random_uint8((16, 16, 3), 300 + seed)
        b = random_uint8((16, 16, 3), 400 + seed)
        assert -1.0 <= ssim(a, b) <= 1.0


def test_luma_weights_bt601():
    img = np.zeros((2, 2, 3))
    img[..., 0] = 1.0
    assert luma_bt601(img)[0, 0] == pytest.approx(0.299)
    img = np.zeros((2, 2, 3))
    img[..., 1] = 1.0
    assert luma_bt601(img)[0, 0] == pytest.approx(0.587)


def test_no_reference_metrics_unavailable_by_default():
    assert no_reference_scores(np.zeros((8, 8, 3))) == {"status": "unavailable"}


def test_no_reference_plugin_registry():
    from textsr import metrics
    metrics.NO_REFERENCE_PLUGINS["mean_brightness"] = lambda img: float(np.mean(img))
    try:
        scores = no_reference_scores(np.full((4, 4, 3), 10.0))
        assert scores == {"mean_brightness": 10.0}
    finally:
        metrics.NO_REFERENCE_PLUGINS.clear()
