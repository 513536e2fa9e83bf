"""scikit-learn style wrappers around the quantizer and the patch autoencoder."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .codec import EncodeJob, decode_image, encode_image
from .imageio import Image
from .quant import QuantConfig, dead_zone_quantize, dequantize
from .training import TrainConfig, isometry_check, train

__all__ = ["DeadZoneQuantizer", "PatchCompressor"]


class DeadZoneQuantizer(TransformerMixin, BaseEstimator):
    """Stateless dead-zone quantizer: ``transform`` gives symbols, ``inverse_transform`` levels."""

    def __init__(self, q=1.0, offset=0.45):
        self.q = q
        self.offset = offset

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.config_ = QuantConfig(self.q, self.offset)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=np.float64)
        return dead_zone_quantize(X, self.config_)

    def inverse_transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(X, dtype=np.int64)
        return dequantize(X, self.config_)


class PatchCompressor(TransformerMixin, BaseEstimator):
    """Patch autoencoder trained with the isometric rate-distortion objective.

    ``X`` holds flattened patches in [0, 1], shape (n, patch_size**2 * channels).
    ``transform`` returns latents, ``inverse_transform`` decodes latents back
    to flattened patches. With ``q`` set, ``transform`` quantizes and
    dequantizes the latents so ``inverse_transform(transform(X))`` is the
    codec's reconstruction at that step size.
    """

    def __init__(self, patch_size=8, channels=1, latent_dim=16, lambda1=5.0, lambda2=0.2,
                 alpha=0.2, steps=10000, learning_rate=1e-3, batch_size=8, seed=0,
                 q=None, offset=0.45):
        self.patch_size = patch_size
        self.channels = channels
        self.latent_dim = latent_dim
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.alpha = alpha
        self.steps = steps
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.q = q
        self.offset = offset

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda1=self.lambda1, lambda2=self.lambda2, alpha=self.alpha, steps=self.steps,
            learning_rate=self.learning_rate, batch_size=self.batch_size, seed=self.seed,
            patch_size=self.patch_size, channels=self.channels, latent_dim=self.latent_dim,
        )

    def _check_patches(self, X):
        X = check_array(X, dtype=np.float64)
        width = self.patch_size ** 2 * self.channels
        if X.shape[1] != width:
            raise ValueError(f"expected {width} features per patch, got {X.shape[1]}")
        return X

    def fit(self, X, y=None):
        X = self._check_patches(X)
        cfg = self._train_config()
        patches = X.reshape(-1, self.patch_size, self.patch_size, self.channels)
        self.model_, self.entropy_model_, self.log_ = train(patches, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = self._check_patches(X)
        y = self.model_.encode(X.reshape(-1, self.patch_size, self.patch_size, self.channels))
        if self.q is None:
            return y
        cfg = QuantConfig(self.q, self.offset)
        centers = self.entropy_model_.medians
        clamped = np.clip(y, self.entropy_model_.y_min, self.entropy_model_.y_max)
        return dequantize(dead_zone_quantize(clamped - centers, cfg), cfg) + centers

    def inverse_transform(self, Y):
        check_is_fitted(self, "model_")
        Y = check_array(Y, dtype=np.float64)
        return self.model_.decode(Y).reshape(len(Y), -1)

    def compress(self, image: Image, q=None, offset=None) -> bytes:
        check_is_fitted(self, "model_")
        cfg = QuantConfig(q if q is not None else (self.q or 1.0), offset if offset is not None else self.offset)
        return encode_image(EncodeJob(image, self.model_, self.entropy_model_, cfg)).to_bytes()

    def decompress(self, data: bytes) -> Image:
        check_is_fitted(self, "model_")
        return decode_image(data, self.model_, self.entropy_model_)

    def isometry(self, X, n=50):
        check_is_fitted(self, "model_")
        X = self._check_patches(X)[:n]
        patches = X.reshape(-1, self.patch_size, self.patch_size, self.channels)
        return isometry_check(self.model_, self.entropy_model_, patches, "mse", self._train_config())
