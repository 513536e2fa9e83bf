import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import correlate2d

from dzcodec.errors import ConfigurationError
from dzcodec.imageio import Image
from dzcodec.metrics import (
    MSSSIM_MIN_SIZE,
    format_metric,
    gaussian_window,
    ms_ssim,
    msssim_db,
    mse,
    psnr,
    ssim,
)

# tf.image.ssim_multiscale(fixture_gray, fixture_gray_blur, max_val=255.0), TensorFlow 2.21,
# computed once when the fixtures were created (see tests/data/make_fixtures.py)
MSSSIM_FIXTURE_REFERENCE = 0.9051803946495056


def brute_mse(a, b):
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            for c in range(a.shape[2]):
                d = float(a[i, j, c]) - float(b[i, j, c])
                total += d * d
    return total / a.size


def random_pair(seed, shape=(24, 20, 3)):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, shape, dtype=np.uint8)
    b = np.clip(a.astype(int) + rng.integers(-20, 21, shape), 0, 255).astype(np.uint8)
    return Image(a), Image(b)


def test_mse_matches_brute_force():
    a, b = random_pair(0)
    assert mse(a, b) == pytest.approx(brute_mse(a.pixels, b.pixels), rel=1e-12)


def test_psnr_matches_brute_force():
    for seed in range(5):
        a, b = random_pair(seed)
        want = 10.0 * math.log10(255.0 ** 2 / brute_mse(a.pixels, b.pixels))
        assert abs(psnr(a, b) - want) < 1e-9


def test_psnr_identical_is_inf():
    a, _ = random_pair(1)
    assert psnr(a, a) == math.inf
    assert format_metric(psnr(a, a)) == "inf"


def test_psnr_zero_db():
    a = Image(np.zeros((4, 4, 1), np.uint8))
    b = Image(np.full((4, 4, 1), 255, np.uint8))
    assert psnr(a, b) == pytest.approx(0.0, abs=1e-12)


def test_shape_mismatch():
    with pytest.raises(ConfigurationError):
        mse(np.zeros((4, 4, 1)), np.zeros((4, 5, 1)))


def test_msssim_db_values():
    assert msssim_db(0.9) == 10.0
    assert msssim_db(0.99) == pytest.approx(20.0, abs=1e-12)
    assert msssim_db(1.0) == 100.0


def test_gaussian_window():
    taps = gaussian_window()
    assert taps.shape == (11,) and taps.sum() == pytest.approx(1.0)
    x = np.arange(11) - 5
    g = np.exp(-(x ** 2) / (2 * 1.5 ** 2))
    np.testing.assert_allclose(taps, g / g.sum())


def ssim_oracle(a, b, L=255.0):
    """Direct 2-D correlation SSIM (single channel), independent of the library's filtering."""
    x = np.arange(11) - 5
    g = np.exp(-(x ** 2) / (2 * 1.5 ** 2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    f = lambda x: correlate2d(x, w, mode="valid")  # noqa: E731
    mu_a, mu_b = f(a), f(b)
    saa = f(a * a) - mu_a ** 2
    sbb = f(b * b) - mu_b ** 2
    sab = f(a * b) - mu_a * mu_b
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
    return s.mean()


def test_ssim_matches_direct_oracle():
    a, b = random_pair(3, (40, 33, 1))
    assert ssim(a, b) == pytest.approx(ssim_oracle(a.pixels[..., 0], b.pixels[..., 0]), abs=1e-12)


def test_ssim_identity_and_symmetry():
    a, b = random_pair(4)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_msssim_fixture(fixture_pair):
    a, b = fixture_pair
    assert abs(ms_ssim(a, b) - MSSSIM_FIXTURE_REFERENCE) < 1e-4


def test_msssim_identity(fixture_pair):
    a, _ = fixture_pair
    assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert msssim_db(ms_ssim(a, a)) == 100.0


def test_msssim_too_small():
    a, b = random_pair(5, (MSSSIM_MIN_SIZE - 1, 200, 1))
    with pytest.raises(ConfigurationError):
        ms_ssim(a, b)


@given(st.floats(0.0, 0.999999))
def test_msssim_db_formula(v):
    assert msssim_db(v) == pytest.approx(min(-10 * math.log10(1 - v), 100.0), rel=1e-12)


def test_format_metric():
    assert format_metric(10.0) == "10"
    assert format_metric(0.123456789) == "0.123457"
    assert format_metric(float("nan")) == "nan"
