"""Variable-rate learned image codec: one isometric autoencoder, a dead-zone
quantizer with adjustable step size, and a range coder."""

from .codec import EncodeJob, decode_image, encode_image, rd_sweep, write_rd_csv
from .coder import BitstreamHeader, CompressedImage, read_bitstream, write_bitstream
from .errors import (
    CodecError,
    ConfigurationError,
    DecodeError,
    EncodingError,
    FormatError,
    ModelMismatchError,
    NumericError,
    StateError,
    TrainingDivergedError,
)
from .estimator import DeadZoneQuantizer, PatchCompressor
from .imageio import Image, load_ppm, save_ppm
from .metrics import ms_ssim, msssim_db, psnr, ssim
from .model import AutoencoderModel, EntropyModel, load_model, model_hash, save_model
from .quant import QuantConfig, dead_zone_quantize, dequantize, symbol_interval
from .training import TrainConfig, isometry_check, loss, train

__version__ = "0.1.0"

__all__ = [
    "EncodeJob",
    "decode_image",
    "encode_image",
    "rd_sweep",
    "write_rd_csv",
    "BitstreamHeader",
    "CompressedImage",
    "read_bitstream",
    "write_bitstream",
    "CodecError",
    "ConfigurationError",
    "DecodeError",
    "EncodingError",
    "FormatError",
    "ModelMismatchError",
    "NumericError",
    "StateError",
    "TrainingDivergedError",
    "DeadZoneQuantizer",
    "PatchCompressor",
    "Image",
    "load_ppm",
    "save_ppm",
    "ms_ssim",
    "msssim_db",
    "psnr",
    "ssim",
    "AutoencoderModel",
    "EntropyModel",
    "load_model",
    "model_hash",
    "save_model",
    "QuantConfig",
    "dead_zone_quantize",
    "dequantize",
    "symbol_interval",
    "TrainConfig",
    "isometry_check",
    "loss",
    "train",
]
