"""Carry-less 32-bit range coder and the compressed-image container.

The coder follows Subbotin's scheme: 32-bit ``low``/``range``, bytewise
renormalization, and when ``range`` drops below 2**16 without the top byte
settling it is truncated to the next 2**16 boundary instead of propagating
a carry. All arithmetic is on Python ints, so output is platform independent.

Symbols are coded patch-major, channel-minor: ``symbols[p, c]`` for p in
raster patch order, then c in latent order.
"""

from __future__ import annotations

import struct
import zlib
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, EncodingError, FormatError
from .quant import FrequencyTable

__all__ = [
    "RangeEncoder",
    "RangeDecoder",
    "range_encode",
    "range_decode",
    "ideal_bits",
    "BitstreamHeader",
    "CompressedImage",
    "write_bitstream",
    "read_bitstream",
    "BITSTREAM_MAGIC",
    "BITSTREAM_VERSION",
]

TOP = 1 << 24
BOT = 1 << 16
MASK32 = 0xFFFFFFFF


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.out = bytearray()

    def encode(self, cum_freq: int, freq: int, total_bits: int) -> None:
        r = self.range >> total_bits
        low = self.low + cum_freq * r
        rng = freq * r
        # renormalize
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOT:
                rng = -low & (BOT - 1)
            else:
                break
            self.out.append((low >> 24) & 0xFF)
            low = (low << 8) & MASK32
            rng = (rng << 8) & MASK32
        self.low, self.range = low, rng

    def finish(self) -> bytes:
        low = self.low
        for _ in range(4):
            self.out.append((low >> 24) & 0xFF)
            low = (low << 8) & MASK32
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise DecodeError("payload truncated")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, table: FrequencyTable, total_bits: int) -> int:
        r = self.range >> total_bits
        target = (self.code - self.low) // r
        if target >= table.total or target < 0:
            raise DecodeError("corrupt payload: cumulative frequency out of range")
        k = bisect_right(table.cumulative, target) - 1
        low = self.low + table.cumulative[k] * r
        rng = table.freqs[k] * r
        code = self.code
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOT:
                rng = -low & (BOT - 1)
            else:
                break
            code = ((code << 8) | self._byte()) & MASK32
            low = (low << 8) & MASK32
            rng = (rng << 8) & MASK32
        self.low, self.range, self.code = low, rng, code
        return table.s_min + k


def _total_bits(tables) -> int:
    totals = {t.total for t in tables}
    if len(totals) != 1:
        raise EncodingError("all frequency tables must share one total")
    total = totals.pop()
    bits = total.bit_length() - 1
    if total != 1 << bits or bits > 16:
        raise EncodingError(f"table total must be a power of two <= 2**16, got {total}")
    return bits


def range_encode(symbols, tables) -> bytes:
    """Encode an (n, channels) integer array; ``tables[c]`` codes column c."""
    sym = np.asarray(symbols, dtype=np.int64)
    if sym.ndim == 1:
        sym = sym[:, None]
    if sym.shape[1] != len(tables):
        raise EncodingError(f"{sym.shape[1]} channels but {len(tables)} tables")
    bits = _total_bits(tables) if tables else 16
    enc = RangeEncoder()
    lows = [t.s_min for t in tables]
    highs = [t.s_max for t in tables]
    channels = len(tables)
    for idx, s in enumerate(sym.ravel().tolist()):
        c = idx % channels
        if not lows[c] <= s <= highs[c]:
            raise EncodingError(
                f"symbol {s} at patch {idx // channels}, channel {c} outside [{lows[c]}, {highs[c]}]"
            )
        t = tables[c]
        k = s - t.s_min
        enc.encode(t.cumulative[k], t.freqs[k], bits)
    return enc.finish()


def range_decode(payload: bytes, tables, count: int) -> np.ndarray:
    """Inverse of :func:`range_encode`; ``count`` is the number of rows (patches)."""
    bits = _total_bits(tables) if tables else 16
    dec = RangeDecoder(payload)
    channels = len(tables)
    out = [dec.decode(tables[i % channels], bits) for i in range(count * channels)]
    return np.array(out, dtype=np.int64).reshape(count, channels)


def ideal_bits(symbols, tables) -> float:
    """``sum -log2(freq / total)`` of the symbols under their tables."""
    sym = np.asarray(symbols, dtype=np.int64)
    if sym.ndim == 1:
        sym = sym[:, None]
    bits = 0.0
    for c, t in enumerate(tables):
        f = np.asarray(t.freqs, dtype=np.float64)[sym[:, c] - t.s_min]
        bits += float(np.sum(np.log2(t.total / f)))
    return bits


# -- container -----------------------------------------------------------

BITSTREAM_MAGIC = b"IQDZ"
BITSTREAM_VERSION = 1
FLAG_ZERO_CENTER = 0x01

_FIXED = struct.Struct("<4sBBHHBBHffQ")


@dataclass(frozen=True)
class BitstreamHeader:
    width: int
    height: int
    channels: int
    patch_size: int
    latent_dim: int
    q: float
    offset: float
    model_hash: int
    s_min: tuple
    s_max: tuple
    flags: int = 0

    def __post_init__(self):
        # the container stores these as float32
        object.__setattr__(self, "q", float(np.float32(self.q)))
        object.__setattr__(self, "offset", float(np.float32(self.offset)))
        object.__setattr__(self, "s_min", tuple(int(v) for v in self.s_min))
        object.__setattr__(self, "s_max", tuple(int(v) for v in self.s_max))
        if len(self.s_min) != self.latent_dim or len(self.s_max) != self.latent_dim:
            raise FormatError("symbol bounds must have one entry per latent")

    @property
    def zero_center(self) -> bool:
        return bool(self.flags & FLAG_ZERO_CENTER)


@dataclass(frozen=True)
class CompressedImage:
    header: BitstreamHeader
    payload: bytes

    def to_bytes(self) -> bytes:
        return write_bitstream(self.header, self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedImage":
        return cls(*read_bitstream(data))

    def __len__(self):
        return len(self.to_bytes())


def write_bitstream(header: BitstreamHeader, payload: bytes) -> bytes:
    try:
        head = _FIXED.pack(
            BITSTREAM_MAGIC, BITSTREAM_VERSION, header.flags, header.width, header.height,
            header.channels, header.patch_size, header.latent_dim,
            header.q, header.offset, header.model_hash,
        )
        bounds = [v for pair in zip(header.s_min, header.s_max) for v in pair]
        head += struct.pack(f"<{len(bounds)}h", *bounds)
        head += struct.pack("<I", len(payload))
    except struct.error as exc:
        raise FormatError(f"header field out of range: {exc}") from exc
    return head + struct.pack("<I", zlib.crc32(head)) + bytes(payload)


def read_bitstream(data: bytes) -> tuple[BitstreamHeader, bytes]:
    if len(data) < _FIXED.size:
        raise FormatError("bitstream shorter than fixed header")
    magic, version, flags, width, height, channels, patch, latent, q, offset, mhash = _FIXED.unpack_from(data)
    if magic != BITSTREAM_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != BITSTREAM_VERSION:
        raise FormatError(f"unsupported version {version}")
    pos = _FIXED.size
    end = pos + 4 * latent + 4
    if len(data) < end + 4:
        raise FormatError("bitstream header truncated")
    bounds = struct.unpack_from(f"<{2 * latent}h", data, pos)
    (payload_len,) = struct.unpack_from("<I", data, end - 4)
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise FormatError("header CRC mismatch")
    payload = bytes(data[end + 4:end + 4 + payload_len])
    if len(payload) != payload_len:
        raise DecodeError(f"payload truncated: expected {payload_len} bytes, got {len(payload)}")
    if end + 4 + payload_len != len(data):
        raise FormatError("trailing bytes after payload")
    header = BitstreamHeader(
        width, height, channels, patch, latent, q, offset, mhash,
        bounds[0::2], bounds[1::2], flags,
    )
    return header, payload
