"""Seeded synthetic images and patch extraction for training."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError


def synthetic_image(rng: np.random.Generator, height=64, width=64, channels=1,
                    waves=5, max_freq=0.1, noise=0.3, smoothing=3.0) -> np.ndarray:
    """One image in [0, 1] of shape (height, width, channels).

    A sum of ``waves`` plane sinusoids with random 2-D frequency (each
    component below ``max_freq`` cycles/pixel) plus Gaussian-smoothed noise,
    stretched to the full [0, 1] range. Colour channels share the structure
    with per-channel gains and offsets.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = np.zeros((height, width))
    for _ in range(waves):
        fx, fy = rng.uniform(-max_freq, max_freq, 2)
        phase = rng.uniform(0.0, 2 * np.pi)
        base += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    smooth = gaussian_filter(rng.standard_normal((height, width)), smoothing)
    base += noise * smooth / (smooth.std() + 1e-12)

    if channels == 1:
        img = base[..., None]
    else:
        img = np.stack([rng.uniform(0.5, 1.0) * base + rng.uniform(-0.5, 0.5) for _ in range(channels)], axis=-1)
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo + 1e-12)


def synthetic_images(n, height=64, width=64, channels=1, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([synthetic_image(rng, height, width, channels) for _ in range(n)])


def extract_patches(images, patch_size, count, seed=0) -> np.ndarray:
    """``count`` random patches of shape (P, P, C) cut from ``images`` (n, H, W, C)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    n, h, w, _ = images.shape
    if h < patch_size or w < patch_size:
        raise ConfigurationError(f"images of {h}x{w} are smaller than patch size {patch_size}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, count)
    rows = rng.integers(0, h - patch_size + 1, count)
    cols = rng.integers(0, w - patch_size + 1, count)
    return np.stack([images[i, r:r + patch_size, c:c + patch_size] for i, r, c in zip(idx, rows, cols)])


def synthetic_patches(count, patch_size=8, channels=1, seed=0, image_size=64) -> np.ndarray:
    n_images = max(1, count // 64)
    images = synthetic_images(n_images, image_size, image_size, channels, seed)
    return extract_patches(images, patch_size, count, seed + 1)
