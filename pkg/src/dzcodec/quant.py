"""Dead-zone scalar quantizer and the per-symbol probability tables it induces.

Symbol ``s`` covers the latent interval

    s > 0:  [(s - offset) Q, (s + 1 - offset) Q)
    s = 0:  (-(1 - offset) Q, (1 - offset) Q)
    s < 0:  ((s - 1 + offset) Q, (s + offset) Q]

so the zero bin is ``2 (1 - offset) Q`` wide and every other bin is ``Q``.
``offset = 0.5`` gives plain rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "QuantConfig",
    "SymbolPlane",
    "FrequencyTable",
    "FREQ_BITS",
    "FREQ_TOTAL",
    "dead_zone_quantize",
    "dequantize",
    "symbol_interval",
    "interval_contains",
    "symbol_probability",
    "symbol_bounds",
    "build_frequency_table",
    "build_frequency_tables",
    "frequencies_from_probabilities",
    "DEFAULT_Q_SWEEP",
    "DEFAULT_OFFSETS",
]

FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS

DEFAULT_Q_SWEEP = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0)
DEFAULT_OFFSETS = (0.4, 0.45, 0.5)


@dataclass(frozen=True)
class QuantConfig:
    q: float = 1.0
    offset: float = 0.45
    # only picks the sign at s = 0; every value in (0, 1) gives the same bins
    omega: float = 0.5

    def __post_init__(self):
        if not (self.q > 0 and np.isfinite(self.q)):
            raise ConfigurationError(f"step size must be positive and finite, got {self.q}")
        if not 0.0 < self.offset <= 0.5:
            raise ConfigurationError(f"offset must lie in (0, 0.5], got {self.offset}")
        if not 0.0 < self.omega < 1.0:
            raise ConfigurationError(f"omega must lie in (0, 1), got {self.omega}")

    def as_float32(self) -> "QuantConfig":
        """The same config with Q and offset rounded to what the bitstream stores."""
        return QuantConfig(float(np.float32(self.q)), float(np.float32(self.offset)), self.omega)


@dataclass
class SymbolPlane:
    """Quantized symbols, shape (num_patches, channels), with per-channel ranges."""

    symbols: np.ndarray
    s_min: np.ndarray
    s_max: np.ndarray

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int64)
        self.s_min = np.asarray(self.s_min, dtype=np.int64)
        self.s_max = np.asarray(self.s_max, dtype=np.int64)
        if self.symbols.ndim != 2 or self.symbols.shape[1] != self.s_min.size:
            raise ConfigurationError("symbols must have shape (n, channels)")
        if np.any(self.symbols < self.s_min) or np.any(self.symbols > self.s_max):
            raise ConfigurationError("symbol outside its channel bounds")


def dead_zone_quantize(y, cfg: QuantConfig):
    """``sgn(y) * floor(|y| / Q + offset)`` with ``sgn(0) = 0``.

    Scalars give a Python int, arrays an int64 array.
    """
    arr = np.asarray(y, dtype=np.float64)
    mag = np.abs(arr)
    m = np.floor(mag / cfg.q + cfg.offset)
    # the division can land an ulp across a bin edge; snap to the bin symbol_interval assigns
    lower, upper = symbol_interval(m, cfg)
    m = m + (mag >= upper) - ((m > 0) & (mag < lower))
    s = (np.sign(arr) * m).astype(np.int64)
    return int(s) if s.ndim == 0 else s


def dequantize(s, cfg: QuantConfig):
    arr = np.asarray(s, dtype=np.float64) * cfg.q
    return float(arr) if arr.ndim == 0 else arr


def symbol_interval(s, cfg: QuantConfig):
    """``(y_lower, y_upper)`` of the bin that quantizes to ``s``."""
    s = np.asarray(s, dtype=np.float64)
    slack = 0.5 - cfg.offset
    upper = (s + 0.5 + np.sign(s + cfg.omega) * slack) * cfg.q
    lower = (s - 0.5 + np.sign(s - cfg.omega) * slack) * cfg.q
    if s.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def interval_contains(s, y, cfg: QuantConfig):
    """Whether ``y`` lies in the bin of ``s``, honouring which edges are closed."""
    lower, upper = symbol_interval(s, cfg)
    s = np.asarray(s)
    y = np.asarray(y, dtype=np.float64)
    pos = (y >= lower) & (y < upper)
    neg = (y > lower) & (y <= upper)
    zero = (y > lower) & (y < upper)
    return np.where(s > 0, pos, np.where(s < 0, neg, zero))


def symbol_probability(em, channel, s, cfg: QuantConfig, median=0.0) -> float:
    """``CDF(median + y_upper) - CDF(median + y_lower)`` for one channel."""
    lower, upper = symbol_interval(s, cfg)
    return max(em.cdf_eval(channel, median + upper) - em.cdf_eval(channel, median + lower), 0.0)


def symbol_bounds(em, cfg: QuantConfig, centers) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel (s_min, s_max) from the trained latent bounds."""
    centers = np.asarray(centers, dtype=np.float64)
    s_min = dead_zone_quantize(em.y_min - centers, cfg)
    s_max = dead_zone_quantize(em.y_max - centers, cfg)
    return np.atleast_1d(s_min), np.atleast_1d(s_max)


@dataclass(frozen=True)
class FrequencyTable:
    s_min: int
    s_max: int
    freqs: tuple
    cumulative: tuple

    def __post_init__(self):
        if len(self.freqs) != self.s_max - self.s_min + 1:
            raise ConfigurationError("frequency count does not match symbol range")
        if self.cumulative[0] != 0 or any(b <= a for a, b in zip(self.cumulative, self.cumulative[1:])):
            raise ConfigurationError("cumulative frequencies must start at 0 and strictly increase")

    @classmethod
    def from_freqs(cls, s_min: int, freqs) -> "FrequencyTable":
        freqs = tuple(int(f) for f in freqs)
        cum = [0]
        for f in freqs:
            cum.append(cum[-1] + f)
        return cls(int(s_min), int(s_min) + len(freqs) - 1, freqs, tuple(cum))

    @property
    def total(self) -> int:
        return self.cumulative[-1]

    def probability(self, s: int) -> float:
        return self.freqs[s - self.s_min] / self.total


def frequencies_from_probabilities(probs, total=FREQ_TOTAL) -> list[int]:
    """Integer frequencies summing to ``total``, each >= 1.

    Each symbol first receives 1; the remaining ``total - n`` counts are
    apportioned in proportion to ``probs`` by largest remainder (ties to the
    lower index). Exact integer arithmetic on the binary expansions of the
    floats keeps the result identical on every platform.
    """
    probs = [max(float(p), 0.0) for p in probs]
    n = len(probs)
    if n == 0:
        raise ConfigurationError("empty symbol alphabet")
    if n > total:
        raise ConfigurationError(f"{n} symbols do not fit a total of {total}")
    spare = total - n
    if not any(probs):
        probs = [1.0] * n
    ratios = [p.as_integer_ratio() for p in probs]
    denom = max(d for _, d in ratios)
    weights = [num * (denom // d) for num, d in ratios]
    wsum = sum(weights)
    quotas = [divmod(w * spare, wsum) for w in weights]
    freqs = [1 + q for q, _ in quotas]
    leftover = spare - sum(q for q, _ in quotas)
    order = sorted(range(n), key=lambda i: (-quotas[i][1], i))
    for i in order[:leftover]:
        freqs[i] += 1
    return freqs


def build_frequency_tables(em, cfg: QuantConfig, centers, s_min=None, s_max=None) -> list[FrequencyTable]:
    """One table per channel over [s_min, s_max] (derived from bounds if not given)."""
    centers = np.broadcast_to(np.asarray(centers, dtype=np.float64), (em.channels,))
    if s_min is None or s_max is None:
        s_min, s_max = symbol_bounds(em, cfg, centers)
    s_min = np.asarray(s_min, dtype=np.int64)
    s_max = np.asarray(s_max, dtype=np.int64)
    if np.any(s_max < s_min):
        raise ConfigurationError("s_max < s_min for some channel")
    counts = s_max - s_min + 1
    width = int(counts.max())
    # evaluate every channel's bin edges in one CDF pass; padded rows are ignored
    sym = s_min[None, :] + np.arange(width)[:, None]
    sym = np.minimum(sym, s_max[None, :])
    lower, upper = symbol_interval(sym, cfg)
    cdf = em.cdf(np.concatenate([centers + lower, centers + upper]))
    probs = np.maximum(cdf[width:] - cdf[:width], 0.0)
    tables = []
    for c in range(em.channels):
        freqs = frequencies_from_probabilities(probs[: counts[c], c])
        tables.append(FrequencyTable.from_freqs(int(s_min[c]), freqs))
    return tables


def build_frequency_table(em, channel, cfg: QuantConfig, median=0.0) -> FrequencyTable:
    centers = np.zeros(em.channels)
    centers[channel] = median
    return build_frequency_tables(em, cfg, centers)[channel]
