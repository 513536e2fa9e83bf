"""Fast randomized property checks run by ``dzcodec selftest``."""

from __future__ import annotations

import math

import numpy as np

from .coder import ideal_bits, range_decode, range_encode
from .imageio import Image
from .metrics import msssim_db, psnr, ssim
from .quant import (
    DEFAULT_OFFSETS,
    QuantConfig,
    FrequencyTable,
    dead_zone_quantize,
    frequencies_from_probabilities,
    interval_contains,
    symbol_interval,
)


def _quantizer_partition(rng):
    s = np.arange(-50, 51)
    for q in (0.25, 0.5, 1.0, 2.5, 4.0):
        for off in DEFAULT_OFFSETS:
            cfg = QuantConfig(q, off)
            lo, hi = symbol_interval(s, cfg)
            if not np.allclose(lo[1:], hi[:-1], rtol=0, atol=1e-12):
                return False, f"gap between bins at Q={q}, offset={off}"
            y = rng.uniform(-40 * q, 40 * q, 2000)
            sym = dead_zone_quantize(y, cfg)
            if not np.all(interval_contains(sym, y, cfg)):
                return False, f"value outside its bin at Q={q}, offset={off}"
    return True, "bins tile the line and contain their values"


def _rounding(rng):
    y = rng.normal(0, 20, 100_000)
    ok = np.array_equal(dead_zone_quantize(y, QuantConfig(1.0, 0.5)), np.rint(y).astype(np.int64))
    return ok, "offset 0.5 equals round-to-nearest"


def _coder(rng):
    worst = 0.0
    for _ in range(5):
        n = int(rng.integers(2, 40))
        freqs = frequencies_from_probabilities(rng.dirichlet(np.full(n, 0.5)))
        table = FrequencyTable.from_freqs(-(n // 2), freqs)
        p = np.asarray(freqs) / table.total
        sym = rng.choice(n, size=4000, p=p) + table.s_min
        payload = range_encode(sym[:, None], [table])
        if not np.array_equal(range_decode(payload, [table], len(sym))[:, 0], sym):
            return False, "round trip mismatch"
        ideal = ideal_bits(sym[:, None], [table])
        worst = max(worst, 8 * len(payload) - ideal)
        if 8 * len(payload) > 1.01 * ideal + 128:
            return False, f"payload {8 * len(payload)} bits vs ideal {ideal:.0f}"
    return True, f"exact round trips, worst overhead {worst:.0f} bits"


def _metrics(rng):
    a = Image(rng.integers(0, 256, (32, 32, 1), dtype=np.uint8))
    b = Image(np.clip(a.pixels.astype(int) + rng.integers(-3, 4, a.pixels.shape), 0, 255).astype(np.uint8))
    err = np.mean((a.pixels.astype(float) - b.pixels.astype(float)) ** 2)
    want = 10 * math.log10(255 ** 2 / err)
    if abs(psnr(a, b) - want) > 1e-9:
        return False, "PSNR disagrees with direct formula"
    if msssim_db(0.9) != 10.0:
        return False, "msssim_db(0.9) != 10"
    if abs(ssim(a, a) - 1.0) > 1e-12:
        return False, "SSIM(x, x) != 1"
    return True, "PSNR, SSIM identity and dB scale"


CHECKS = (
    ("quantizer-partition", _quantizer_partition),
    ("quantizer-rounding", _rounding),
    ("range-coder", _coder),
    ("metrics", _metrics),
)


def run(seed=0):
    """Return ``[(name, passed, detail), ...]``."""
    rng = np.random.default_rng(seed)
    results = []
    for name, check in CHECKS:
        ok, detail = check(rng)
        results.append((name, bool(ok), detail))
    return results
