"""Image encode/decode: patches -> latents -> dead-zone symbols -> range coder."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .coder import (
    FLAG_ZERO_CENTER,
    BitstreamHeader,
    CompressedImage,
    ideal_bits,
    range_decode,
    range_encode,
    read_bitstream,
)
from .errors import ConfigurationError, ModelMismatchError, NumericError
from .imageio import Image
from .metrics import MSSSIM_MIN_SIZE, format_metric, ms_ssim, msssim_db, psnr
from .model import AutoencoderModel, EntropyModel, model_hash
from .quant import (
    DEFAULT_OFFSETS,
    DEFAULT_Q_SWEEP,
    QuantConfig,
    build_frequency_tables,
    dead_zone_quantize,
    dequantize,
    symbol_bounds,
)

__all__ = [
    "EncodeJob",
    "image_to_patches",
    "patches_to_image",
    "encode_image",
    "decode_image",
    "decode_symbols",
    "rd_sweep",
    "write_rd_csv",
    "RD_COLUMNS",
]

RD_COLUMNS = ("Q", "offset", "bpp", "psnr_db", "msssim_db")
MAX_DIM = 0xFFFF


def image_to_patches(pixels: np.ndarray, patch_size: int) -> tuple[np.ndarray, int, int]:
    """Edge-pad (H, W, C) to multiples of ``patch_size``; return raster-ordered patches."""
    h, w, c = pixels.shape
    rows = -(-h // patch_size)
    cols = -(-w // patch_size)
    padded = np.pad(pixels, ((0, rows * patch_size - h), (0, cols * patch_size - w), (0, 0)), mode="edge")
    patches = padded.reshape(rows, patch_size, cols, patch_size, c).transpose(0, 2, 1, 3, 4)
    return patches.reshape(rows * cols, patch_size, patch_size, c), rows, cols


def patches_to_image(patches: np.ndarray, rows: int, cols: int, height: int, width: int) -> np.ndarray:
    n, p, _, c = patches.shape
    grid = patches.reshape(rows, cols, p, p, c).transpose(0, 2, 1, 3, 4)
    return grid.reshape(rows * p, cols * p, c)[:height, :width]


@dataclass
class EncodeJob:
    image: Image
    model: AutoencoderModel
    em: EntropyModel
    quant: QuantConfig
    zero_center: bool = False

    def __post_init__(self):
        if self.image.channels != self.model.channels:
            raise ConfigurationError(
                f"image has {self.image.channels} channels, model expects {self.model.channels}"
            )
        if self.image.width > MAX_DIM or self.image.height > MAX_DIM:
            raise ConfigurationError("image dimensions exceed 65535")
        self.quant = self.quant.as_float32()

    @property
    def grid(self) -> tuple[int, int]:
        p = self.model.patch_size
        return -(-self.image.height // p), -(-self.image.width // p)

    def centers(self) -> np.ndarray:
        return np.zeros(self.em.channels) if self.zero_center else self.em.medians.copy()


def _quantize_latents(latents, em, cfg, centers):
    if not np.all(np.isfinite(latents)):
        raise NumericError("encoder produced non-finite latents")
    clamped = np.clip(latents, em.y_min, em.y_max)
    return dead_zone_quantize(clamped - centers, cfg)


def encode_image(job: EncodeJob, *, with_symbols=False):
    """Compress ``job.image``; returns a :class:`CompressedImage`.

    With ``with_symbols=True`` also returns the symbol array and the ideal
    code length in bits, for diagnostics.
    """
    model, em, cfg = job.model, job.em, job.quant
    patches, _, _ = image_to_patches(job.image.normalized(), model.patch_size)
    centers = job.centers()
    symbols = _quantize_latents(model.encode(patches), em, cfg, centers)
    s_min, s_max = symbol_bounds(em, cfg, centers)
    if np.any(s_min < -32768) or np.any(s_max > 32767):
        raise ConfigurationError(f"step size {cfg.q} too small: symbol range exceeds 16 bits")
    tables = build_frequency_tables(em, cfg, centers, s_min, s_max)
    payload = range_encode(symbols, tables)
    header = BitstreamHeader(
        width=job.image.width,
        height=job.image.height,
        channels=job.image.channels,
        patch_size=model.patch_size,
        latent_dim=model.latent_dim,
        q=cfg.q,
        offset=cfg.offset,
        model_hash=model_hash(model, em),
        s_min=s_min,
        s_max=s_max,
        flags=FLAG_ZERO_CENTER if job.zero_center else 0,
    )
    compressed = CompressedImage(header, payload)
    if with_symbols:
        return compressed, symbols, ideal_bits(symbols, tables)
    return compressed


def _check_header(header: BitstreamHeader, model, em):
    expected = model_hash(model, em)
    if header.model_hash != expected:
        raise ModelMismatchError(
            f"bitstream was produced by model {header.model_hash:016x}, loaded model is {expected:016x}"
        )
    if (header.patch_size, header.latent_dim, header.channels) != (
        model.patch_size, model.latent_dim, model.channels,
    ):
        raise ModelMismatchError("bitstream geometry does not match the model")


def decode_symbols(cs, model: AutoencoderModel, em: EntropyModel) -> np.ndarray:
    """Entropy-decode the symbol plane of a compressed image."""
    if isinstance(cs, (bytes, bytearray, memoryview)):
        cs = CompressedImage(*read_bitstream(bytes(cs)))
    header = cs.header
    _check_header(header, model, em)
    cfg = QuantConfig(header.q, header.offset)
    centers = np.zeros(em.channels) if header.zero_center else em.medians
    tables = build_frequency_tables(em, cfg, centers, header.s_min, header.s_max)
    p = header.patch_size
    count = (-(-header.height // p)) * (-(-header.width // p))
    return range_decode(cs.payload, tables, count)


def decode_image(cs, model: AutoencoderModel, em: EntropyModel) -> Image:
    """Decode a :class:`CompressedImage` (or its bytes) back to an 8-bit image."""
    if isinstance(cs, (bytes, bytearray, memoryview)):
        cs = CompressedImage(*read_bitstream(bytes(cs)))
    header = cs.header
    symbols = decode_symbols(cs, model, em)
    cfg = QuantConfig(header.q, header.offset)
    centers = np.zeros(em.channels) if header.zero_center else em.medians
    latents = dequantize(symbols, cfg) + centers
    p = header.patch_size
    rows, cols = -(-header.height // p), -(-header.width // p)
    recon = patches_to_image(model.decode(latents), rows, cols, header.height, header.width)
    return Image.from_normalized(recon)


def _sort_rows(rows):
    return sorted(rows, key=lambda r: (r["offset"], r["Q"]))


def rd_sweep(images, model, em, q_list=DEFAULT_Q_SWEEP, offsets=DEFAULT_OFFSETS, zero_center=False):
    """One row per (Q, offset) aggregated over ``images``.

    ``bpp`` is total bitstream bits over total pixel count; PSNR and MS-SSIM
    (dB) are per-image means. MS-SSIM is NaN when no image is large enough.
    """
    images = list(images)
    if not images:
        raise ConfigurationError("rd_sweep needs at least one image")
    pixels = sum(img.width * img.height for img in images)
    rows = []
    for offset in offsets:
        for q in q_list:
            bits = 0
            psnrs, msdb = [], []
            for img in images:
                data = encode_image(EncodeJob(img, model, em, QuantConfig(q, offset), zero_center)).to_bytes()
                bits += 8 * len(data)
                rec = decode_image(data, model, em)
                psnrs.append(psnr(img, rec))
                if min(img.width, img.height) >= MSSSIM_MIN_SIZE:
                    msdb.append(msssim_db(ms_ssim(img, rec)))
            rows.append({
                "Q": float(q),
                "offset": float(offset),
                "bpp": bits / pixels,
                "psnr_db": float(np.mean(psnrs)),
                "msssim_db": float(np.mean(msdb)) if msdb else math.nan,
            })
    return _sort_rows(rows)


def write_rd_csv(rows, path_or_file=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RD_COLUMNS)
    for r in rows:
        w.writerow([format_metric(r[c]) for c in RD_COLUMNS])
    text = buf.getvalue()
    if path_or_file is not None:
        if hasattr(path_or_file, "write"):
            path_or_file.write(text)
        else:
            with open(path_or_file, "w", newline="") as fh:
                fh.write(text)
    return text
