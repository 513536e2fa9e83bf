"""Image quality metrics: MSE, PSNR, SSIM, MS-SSIM and the dB conversion."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError
from .imageio import Image

__all__ = [
    "gaussian_window",
    "mse",
    "psnr",
    "ssim",
    "ms_ssim",
    "msssim_db",
    "format_metric",
    "MSSSIM_WEIGHTS",
]

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_MIN_SIZE = WINDOW_SIZE * 2 ** (len(MSSSIM_WEIGHTS) - 1)  # 176
DB_CAP = 100.0


def gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _as_pixels(img) -> np.ndarray:
    """0-255 float array of shape (H, W, C)."""
    if isinstance(img, Image):
        return img.pixels.astype(np.float64)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def _pair(a, b):
    a, b = _as_pixels(a), _as_pixels(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean squared error on the 0-255 scale over all pixels and channels."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB on the 0-255 scale; ``inf`` for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / err)


def _filter_valid(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of a 2-D array."""
    k = taps.size
    h, w = x.shape
    rows = sum(taps[i] * x[i:h - k + 1 + i, :] for i in range(k))
    return sum(taps[i] * rows[:, i:w - k + 1 + i] for i in range(k))


def _ssim_components(a: np.ndarray, b: np.ndarray, data_range: float):
    """Mean luminance term and mean contrast-structure term for one channel."""
    taps = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a ** 2
    var_b = _filter_valid(b * b, taps) - mu_b ** 2
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim(a, b, data_range=255.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window, averaged over channels."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < WINDOW_SIZE:
        raise ConfigurationError(f"SSIM needs at least {WINDOW_SIZE}x{WINDOW_SIZE} pixels")
    vals = []
    for c in range(a.shape[2]):
        lum, cs = _ssim_components(a[..., c], b[..., c], data_range)
        vals.append(np.mean(lum * cs))
    return float(np.mean(vals))


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, data_range=255.0) -> float:
    """Five-scale MS-SSIM, computed per channel and averaged.

    Contrast-structure terms are clipped at zero before exponentiation.
    """
    a, b = _pair(a, b)
    if min(a.shape[:2]) < MSSSIM_MIN_SIZE:
        raise ConfigurationError(
            f"MS-SSIM needs at least {MSSSIM_MIN_SIZE}x{MSSSIM_MIN_SIZE} pixels "
            f"(got {a.shape[1]}x{a.shape[0]}); use single-scale ssim() instead"
        )
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        value = 1.0
        for level, weight in enumerate(MSSSIM_WEIGHTS):
            lum, cs = _ssim_components(x, y, data_range)
            last = level == len(MSSSIM_WEIGHTS) - 1
            term = np.mean(lum * cs) if last else np.mean(cs)
            value *= max(float(term), 0.0) ** weight
            if not last:
                x, y = _downsample(x), _downsample(y)
        scores.append(value)
    return float(np.mean(scores))


def msssim_db(value: float) -> float:
    """``-10 log10(1 - v)``, capped at 100 dB."""
    gap = 1.0 - float(value)
    if gap < 1e-10:
        return DB_CAP
    return -10.0 * math.log10(gap)


def format_metric(value: float) -> str:
    if math.isinf(value):
        return "inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.6g}"
