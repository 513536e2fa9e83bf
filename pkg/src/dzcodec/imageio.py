"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = ["Image", "load_ppm", "save_ppm", "loads_ppm", "dumps_ppm"]


@dataclass(eq=False)
class Image:
    """8-bit image; ``pixels`` has shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[..., None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise FormatError(f"pixels must be (H, W, 1|3), got {px.shape}")
        self.pixels = px.astype(np.uint8, copy=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def normalized(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / 255.0

    @classmethod
    def from_normalized(cls, values) -> "Image":
        """Scale [0, 1] values to 8 bits, rounding half away from zero."""
        scaled = np.asarray(values, dtype=np.float64) * 255.0
        rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
        return cls(np.clip(rounded, 0, 255).astype(np.uint8))

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def loads_ppm(data: bytes) -> Image:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PNM header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}; only P5/P6")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError("non-numeric PNM header field") from exc
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported; only 8-bit (255)")
    if width <= 0 or height <= 0:
        raise FormatError("PNM dimensions must be positive")
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise FormatError("missing whitespace after PNM header")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    size = width * height * channels
    raster = data[pos:pos + size]
    if len(raster) != size:
        raise FormatError(f"PNM raster truncated: expected {size} bytes, got {len(raster)}")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return Image(px.copy())


def dumps_ppm(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    buf = io.BytesIO()
    buf.write(b"%s\n%d %d\n255\n" % (magic, img.width, img.height))
    buf.write(np.ascontiguousarray(img.pixels).tobytes())
    return buf.getvalue()


def load_ppm(path) -> Image:
    return loads_ppm(Path(path).read_bytes())


def save_ppm(path, img: Image) -> None:
    Path(path).write_bytes(dumps_ppm(img))
