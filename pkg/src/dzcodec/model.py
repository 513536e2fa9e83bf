"""Dense patch autoencoder and factorized (per-channel) entropy model.

Both models keep their parameters as :class:`~dzcodec.autodiff.Tensor`
objects so a training graph can reference them directly. Inference helpers
build a throwaway graph for the requested batch size and run it forward.
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path

import numpy as np

from .autodiff import Graph, Node, Tensor
from .errors import ConfigurationError, FormatError, NumericError

__all__ = [
    "AutoencoderModel",
    "EntropyModel",
    "PROB_FLOOR",
    "model_hash",
    "save_model",
    "load_model",
    "dumps_model",
    "loads_model",
]

PROB_FLOOR = 2.0 ** -50
MODEL_MAGIC = b"IQDZM1"
BOUND_QUANTILES = (0.0005, 0.9995, 0.5)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")


class AutoencoderModel:
    """Encoder f and decoder g as tanh MLPs acting on flattened patches.

    The encoder ends in a linear layer (latents are unbounded); the decoder
    ends in a sigmoid so reconstructions stay inside [0, 1].
    """

    def __init__(self, patch_size=8, channels=1, latent_dim=16, hidden=None, seed=0):
        if channels not in (1, 3):
            raise ConfigurationError(f"channels must be 1 or 3, got {channels}")
        if not 1 <= patch_size <= 255:
            raise ConfigurationError(f"patch_size out of range: {patch_size}")
        self.patch_size = int(patch_size)
        self.channels = int(channels)
        self.latent_dim = int(latent_dim)
        if hidden is None:
            hidden = (4 * patch_size * patch_size,) * 2
        self.hidden = tuple(int(h) for h in hidden)

        rng = np.random.default_rng(seed)
        enc_sizes = (self.input_dim, *self.hidden, self.latent_dim)
        dec_sizes = (self.latent_dim, *reversed(self.hidden), self.input_dim)
        self.encoder_layers = self._init_layers("enc", enc_sizes, rng)
        self.decoder_layers = self._init_layers("dec", dec_sizes, rng)

    @staticmethod
    def _init_layers(prefix, sizes, rng):
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), f"{prefix}.{i}.w")
            b = Tensor(np.zeros(fan_out), f"{prefix}.{i}.b")
            layers.append((w, b))
        return layers

    @property
    def input_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def patch_shape(self) -> tuple[int, int, int]:
        return (self.patch_size, self.patch_size, self.channels)

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.encoder_layers + self.decoder_layers for t in layer]

    # -- graph builders ------------------------------------------------
    def build_encoder(self, g: Graph, x: Node) -> Node:
        h = x
        last = len(self.encoder_layers) - 1
        for i, (w, b) in enumerate(self.encoder_layers):
            h = g.affine(h, g.param(w), g.param(b))
            if i < last:
                h = g.tanh(h)
        return h

    def build_decoder(self, g: Graph, y: Node) -> Node:
        h = y
        last = len(self.decoder_layers) - 1
        for i, (w, b) in enumerate(self.decoder_layers):
            h = g.affine(h, g.param(w), g.param(b))
            h = g.sigmoid(h) if i == last else g.tanh(h)
        return h

    # -- inference -----------------------------------------------------
    def _flatten_patches(self, patches):
        arr = np.asarray(patches, dtype=np.float64)
        if arr.shape == self.patch_shape:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[1:] != self.patch_shape:
            raise ConfigurationError(
                f"expected patches of shape (n, {', '.join(map(str, self.patch_shape))}), got {arr.shape}"
            )
        return arr.reshape(arr.shape[0], -1)

    def encode(self, patches) -> np.ndarray:
        """Latents for a batch of patches, shape (n, latent_dim)."""
        flat = self._flatten_patches(patches)
        if flat.shape[0] == 0:
            return np.zeros((0, self.latent_dim))
        g = Graph()
        g.set_output(self.build_encoder(g, g.input(flat.shape, "x")))
        return g.forward([flat]).data

    def decode(self, latents) -> np.ndarray:
        """Reconstructed patches, shape (n, P, P, C), values in [0, 1]."""
        y = np.asarray(latents, dtype=np.float64)
        if y.ndim == 1:
            y = y[None]
        if y.ndim != 2 or y.shape[1] != self.latent_dim:
            raise ConfigurationError(f"expected latents of shape (n, {self.latent_dim}), got {y.shape}")
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite latent passed to decoder")
        if y.shape[0] == 0:
            return np.zeros((0, *self.patch_shape))
        g = Graph()
        g.set_output(self.build_decoder(g, g.input(y.shape, "y")))
        return g.forward([y]).data.reshape(y.shape[0], *self.patch_shape)

    def encode_latent(self, patch) -> np.ndarray:
        patch = np.asarray(patch, dtype=np.float64)
        if patch.shape != self.patch_shape:
            raise ConfigurationError(f"patch shape {patch.shape} != {self.patch_shape}")
        return self.encode(patch[None])[0]

    def decode_latent(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.latent_dim,):
            raise ConfigurationError(f"latent shape {y.shape} != ({self.latent_dim},)")
        return self.decode(y[None])[0]


class EntropyModel:
    """Per-channel monotone CDF built from positive-weight scalar layers.

    Every channel owns an independent network ``R -> R``: layers of width
    ``(1, *filters, 1)`` whose weights pass through softplus, hidden units
    ``u + tanh(a) * tanh(u)`` (monotone for any ``a``), and a final sigmoid.
    Zero biases make the logit odd in ``y``, hence ``cdf(0) == 0.5`` at
    initialization.
    """

    def __init__(self, channels=16, filters=(3, 3), init_scale=10.0):
        self.channels = int(channels)
        self.filters = tuple(int(f) for f in filters)
        widths = (1, *self.filters, 1)
        scale = float(init_scale) ** (1.0 / (len(widths) - 1))
        self.matrices: list[Tensor] = []
        self.biases: list[Tensor] = []
        self.factors: list[Tensor] = []
        for k, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            init = np.log(np.expm1(1.0 / scale / w_out))
            self.matrices.append(Tensor(np.full((self.channels, w_out, w_in), init), f"cdf.{k}.h"))
            self.biases.append(Tensor(np.zeros((self.channels, w_out)), f"cdf.{k}.b"))
            if k < len(widths) - 2:
                self.factors.append(Tensor(np.zeros((self.channels, w_out)), f"cdf.{k}.a"))
        # columns: y_min, y_max, median
        self.bounds = np.tile([-init_scale, init_scale, 0.0], (self.channels, 1))

    def parameters(self) -> list[Tensor]:
        out = []
        for k, (h, b) in enumerate(zip(self.matrices, self.biases)):
            out += [h, b]
            if k < len(self.factors):
                out.append(self.factors[k])
        return out

    @property
    def y_min(self):
        return self.bounds[:, 0]

    @property
    def y_max(self):
        return self.bounds[:, 1]

    @property
    def medians(self):
        return self.bounds[:, 2]

    # -- graph builders ------------------------------------------------
    def build_logits(self, g: Graph, y: Node) -> Node:
        """Logits for ``y`` of shape (batch, channels); same output shape."""
        batch = y.shape[0]
        u = g.reshape(y, (batch, self.channels, 1))
        for k, (h, b) in enumerate(zip(self.matrices, self.biases)):
            w_in = h.shape[2]
            weight = g.softplus(g.param(h))
            prod = g.multiply(g.reshape(u, (batch, self.channels, 1, w_in)), weight)
            u = g.add(g.sum(prod, axis=-1), g.param(b))
            if k < len(self.factors):
                u = g.add(u, g.multiply(g.tanh(g.param(self.factors[k])), g.tanh(u)))
        return g.reshape(u, (batch, self.channels))

    def build_cdf(self, g: Graph, y: Node) -> Node:
        return g.sigmoid(self.build_logits(g, y))

    def build_interval_mass(self, g: Graph, lower: Node, upper: Node) -> Node:
        """``CDF(upper) - CDF(lower)`` clamped below by the probability floor."""
        batch = lower.shape[0]
        both = self.build_cdf(g, g.concat([upper, lower], axis=0))
        hi = g.slice(both, 0, batch)
        lo = g.slice(both, batch, 2 * batch)
        return g.clip_min(g.sub(hi, lo), PROB_FLOOR)

    def build_rate(self, g: Graph, y: Node, width: float) -> Node:
        """Total bits ``sum -log2 P(y)`` with ``P`` the mass of a width-``width`` bin at ``y``."""
        mass = self.build_interval_mass(g, g.shift(y, -width / 2), g.shift(y, width / 2))
        return g.scale(g.sum(g.log(mass)), -1.0 / np.log(2.0))

    # -- numeric evaluation --------------------------------------------
    def cdf(self, values) -> np.ndarray:
        """CDF of every channel at ``values`` of shape (m, channels)."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != self.channels:
            raise ConfigurationError(f"expected values of shape (m, {self.channels}), got {v.shape}")
        if v.shape[0] == 0:
            return np.zeros(v.shape)
        g = Graph()
        g.set_output(self.build_cdf(g, g.input(v.shape, "y")))
        with np.errstate(over="ignore"):
            return g.forward([np.clip(v, -1e150, 1e150)]).data

    def cdf_eval(self, channel: int, y: float) -> float:
        if not 0 <= channel < self.channels:
            raise ConfigurationError(f"channel {channel} out of range")
        row = np.zeros((1, self.channels))
        row[0, channel] = y
        return float(self.cdf(row)[0, channel])

    def rate_bits(self, y, alpha: float = 0.2) -> float:
        """Bits needed for latents ``y`` (shape (channels,) or (n, channels))."""
        _check_alpha(alpha)
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        mass = self.cdf(y + alpha / 2) - self.cdf(y - alpha / 2)
        return float(-np.sum(np.log2(np.maximum(mass, PROB_FLOOR))))

    def quantile(self, q: float, iterations=200) -> np.ndarray:
        """Per-channel ``y`` with ``cdf(y) == q``, by bisection."""
        lo = np.full(self.channels, -1.0)
        hi = np.full(self.channels, 1.0)
        for _ in range(200):
            below = self.cdf(lo[None])[0] > q
            if not below.any():
                break
            lo[below] *= 2.0
        for _ in range(200):
            above = self.cdf(hi[None])[0] < q
            if not above.any():
                break
            hi[above] *= 2.0
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            go_up = self.cdf(mid[None])[0] < q
            lo = np.where(go_up, mid, lo)
            hi = np.where(go_up, hi, mid)
            if np.all(hi - lo <= 1e-12 * np.maximum(1.0, np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def fit_bounds(self) -> np.ndarray:
        """Freeze (y_min, y_max, median) at the 0.05%, 99.95% and 50% quantiles."""
        self.bounds = np.stack([self.quantile(q) for q in BOUND_QUANTILES], axis=1)
        return self.bounds


# -- serialization -----------------------------------------------------

_HEADER = struct.Struct("<BBH")


def _body_bytes(model: AutoencoderModel, em: EntropyModel) -> bytes:
    if em.channels != model.latent_dim:
        raise ConfigurationError(
            f"entropy model has {em.channels} channels, autoencoder has {model.latent_dim} latents"
        )
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(_HEADER.pack(model.patch_size, model.channels, model.latent_dim))
    buf.write(struct.pack("<B", len(model.hidden)))
    buf.write(struct.pack(f"<{len(model.hidden)}H", *model.hidden))
    buf.write(struct.pack("<B", len(em.filters)))
    buf.write(struct.pack(f"<{len(em.filters)}B", *em.filters))
    params = [t.data.ravel() for t in model.parameters() + em.parameters()]
    flat = np.concatenate(params).astype("<f8")
    buf.write(struct.pack("<Q", flat.size))
    buf.write(flat.tobytes())
    buf.write(np.asarray(em.bounds, dtype="<f8").tobytes())
    return buf.getvalue()


def _digest(body: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")


def model_hash(model: AutoencoderModel, em: EntropyModel) -> int:
    """64-bit digest over the serialized parameters and bounds."""
    return _digest(_body_bytes(model, em))


def dumps_model(model: AutoencoderModel, em: EntropyModel) -> bytes:
    body = _body_bytes(model, em)
    return body + struct.pack("<Q", _digest(body))


def loads_model(data: bytes) -> tuple[AutoencoderModel, EntropyModel]:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("model file truncated")
        chunk = bytes(view[pos:pos + n])
        pos += n
        return chunk

    if take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise FormatError("bad model magic")
    patch_size, channels, latent_dim = _HEADER.unpack(take(_HEADER.size))
    (n_hidden,) = struct.unpack("<B", take(1))
    hidden = struct.unpack(f"<{n_hidden}H", take(2 * n_hidden))
    (n_filters,) = struct.unpack("<B", take(1))
    filters = struct.unpack(f"<{n_filters}B", take(n_filters))
    (count,) = struct.unpack("<Q", take(8))

    model = AutoencoderModel(patch_size, channels, latent_dim, hidden)
    em = EntropyModel(latent_dim, filters)
    tensors = model.parameters() + em.parameters()
    expected = sum(t.data.size for t in tensors)
    if count != expected:
        raise FormatError(f"parameter count {count} does not match layer table ({expected})")
    flat = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
    pos_p = 0
    for t in tensors:
        t.data = flat[pos_p:pos_p + t.data.size].reshape(t.data.shape).copy()
        pos_p += t.data.size
    em.bounds = np.frombuffer(take(24 * latent_dim), dtype="<f8").astype(np.float64).reshape(latent_dim, 3)
    body_end = pos
    (stored,) = struct.unpack("<Q", take(8))
    if pos != len(view):
        raise FormatError("trailing bytes after model hash")
    if stored != _digest(bytes(view[:body_end])):
        raise FormatError("model hash mismatch; file corrupted")
    return model, em


def save_model(path, model: AutoencoderModel, em: EntropyModel) -> int:
    data = dumps_model(model, em)
    Path(path).write_bytes(data)
    return model_hash(model, em)


def load_model(path) -> tuple[AutoencoderModel, EntropyModel]:
    return loads_model(Path(path).read_bytes())
