import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from sparsect import autodiff as ad
from sparsect.metrics import hu_window, psnr, ssim


def brute_psnr(x, ref, data_range):
    total = 0.0
    for a, b in zip(x.ravel().tolist(), ref.ravel().tolist()):
        total += (a - b) ** 2
    return 10 * math.log10(data_range**2 / (total / x.size))


def brute_ssim(x, ref, data_range, win=7):
    """Window-by-window SSIM with explicit sample statistics."""
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    n = win * win
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            a = x[i : i + win, j : j + win].ravel()
            b = ref[i : i + win, j : j + win].ravel()
            ma, mb = a.sum() / n, b.sum() / n
            va = ((a - ma) ** 2).sum() / (n - 1)
            vb = ((b - mb) ** 2).sum() / (n - 1)
            cab = ((a - ma) * (b - mb)).sum() / (n - 1)
            vals.append(((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        shape = tuple(rng.integers(7, 20, size=2))
        x = rng.random(shape)
        ref = np.clip(x + rng.normal(0, rng.uniform(0.01, 0.3), shape), 0, 1)
        yield x, ref, float(rng.choice([1.0, 2.0, 255.0]))


def test_psnr_identical_is_infinite():
    x = np.random.default_rng(0).random((8, 8))
    assert psnr(x, x) == math.inf


def test_psnr_uniform_offset():
    x = np.full((10, 10), 0.3)
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-9)


def test_metrics_match_brute_force_on_random_pairs():
    for x, ref, r in random_pairs(50):
        assert abs(psnr(x, ref, r) - brute_psnr(x, ref, r)) <= 1e-12
        assert abs(ssim(x, ref, r) - brute_ssim(x, ref, r)) <= 1e-9


def test_ssim_matches_scikit_image_defaults():
    for x, ref, r in random_pairs(10, seed=1):
        expected = structural_similarity(x, ref, data_range=r, win_size=7)
        assert ssim(x, ref, r) == pytest.approx(expected, abs=1e-9)


def test_ssim_identical_is_exactly_one():
    rng = np.random.default_rng(2)
    for scale in (1e-6, 1.0, 1e3):
        x = rng.standard_normal((16, 12)) * scale
        assert ssim(x, x) == 1.0


def test_ssim_luminance_collapse():
    ref = np.random.default_rng(3).random((20, 20))
    # an offset of one range only drops the luminance term to about 0.6 at mean 0.5
    assert ssim(ref + 1.0, ref) == pytest.approx(brute_ssim(ref + 1.0, ref, 1.0), abs=1e-12)
    val = ssim(ref + 2.0, ref)
    assert val < 0.5
    assert val == pytest.approx(brute_ssim(ref + 2.0, ref, 1.0), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_metrics_are_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 9, 11))
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)
    assert -1.0 <= ssim(a, b) <= 1.0


def test_metric_input_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        ssim(np.zeros((6, 20)), np.zeros((6, 20)))
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.ones(3), data_range=0)


def test_window_mapping():
    np.testing.assert_array_equal(hu_window([-1024, 150, -437, -2000, 900], -1024, 150),
                                  [0.0, 1.0, 0.5, 0.0, 1.0])
    with pytest.raises(ValueError):
        hu_window([0.0], 1.0, 1.0)


def test_huber_branches_meet_at_unit_residual():
    x, y = np.array([1.0, -1.0]), np.zeros(2)
    quadratic = 0.5 * 1.0**2
    linear = 1.0 * (1.0 - 0.5)
    assert float(ad.huber_loss(x, y).value) == quadratic == linear
    below = float(ad.huber_loss(x * (1 - 1e-12), y).value)
    above = float(ad.huber_loss(x * (1 + 1e-12), y).value)
    assert below == pytest.approx(0.5, abs=1e-11) and above == pytest.approx(0.5, abs=1e-11)
