"""Rate-distortion training with clean and noise-perturbed decoder passes.

Per patch ``x`` the objective is

    rate(y) + lambda1 * ln(D(x, g(y)) + eps0) + lambda2 * D(g(y), g(y + noise))

with ``y = f(x)`` and noise uniform on ``[-alpha/2, alpha/2]``. The second
distortion pins the decoder Jacobian to a scaled isometry, which is what
makes a plain uniform quantizer usable at any step size afterwards.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import GradCheckReport, Graph, Node, grad_check
from .errors import ConfigurationError, NumericError, TrainingDivergedError
from .metrics import K1, K2, gaussian_window
from .model import AutoencoderModel, EntropyModel

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "NoiseSpec",
    "LossGraph",
    "TrainLog",
    "Adam",
    "distortion",
    "loss",
    "loss_gradcheck",
    "objective",
    "train",
    "IsometryReport",
    "isometry_check",
    "DIST_FLOOR",
]

DIST_FLOOR = 1e-9
METRICS = ("mse", "ssim")
OBJECTIVES = ("isometric", "rd")


@dataclass
class TrainConfig:
    lambda1: float = 5.0
    lambda2: float = 0.2
    alpha: float = 0.2
    metric: str = "mse"
    learning_rate: float = 1e-3
    batch_size: int = 8
    steps: int = 10000
    seed: int = 0
    # MSE is measured after scaling [0, 1] pixels by this factor
    pixel_scale: float = 255.0
    rate_unit: str = "nats"
    objective: str = "isometric"
    patch_size: int = 8
    channels: int = 1
    latent_dim: int = 16
    h_form: str = "log"

    def __post_init__(self):
        self.validate()

    @classmethod
    def for_metric(cls, metric="mse", **overrides) -> "TrainConfig":
        """Defaults per distortion: (5, 0.2, 0.2) for MSE, (1, 256, 0.2) for SSIM."""
        base = {"mse": dict(lambda1=5.0, lambda2=0.2), "ssim": dict(lambda1=1.0, lambda2=256.0, patch_size=16)}
        if metric not in base:
            raise ConfigurationError(f"unknown metric {metric!r}")
        return cls(metric=metric, **{**base[metric], **overrides})

    def validate(self):
        if self.lambda1 <= 0:
            raise ConfigurationError("lambda1 must be > 0")
        # lambda2 == 0 is accepted for the isometry ablation only
        if self.lambda2 < 0:
            raise ConfigurationError("lambda2 must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}")
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}")
        if self.rate_unit not in ("nats", "bits"):
            raise ConfigurationError("rate_unit must be 'nats' or 'bits'")
        if self.h_form != "log":
            raise ConfigurationError("only h_form='log' is supported")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigurationError("batch_size must be >= 1 and steps >= 0")
        if self.metric == "ssim" and self.patch_size < 11:
            raise ConfigurationError("SSIM training needs patch_size >= 11")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            kind = known[key]
            kwargs[key] = raw if kind == "str" else (int(raw) if kind == "int" else float(raw))
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Flat ``key = value`` text file; ``#`` starts a comment."""
        mapping = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
        return cls.from_mapping(mapping)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean uniform noise on ``[-alpha/2, alpha/2]``, i.i.d. per component."""

    alpha: float

    @property
    def variance(self) -> float:
        return self.alpha ** 2 / 12.0

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.uniform(-self.alpha / 2, self.alpha / 2, shape)


# -- distortion ----------------------------------------------------------


def _ssim_filter_matrix(patch_size: int, channels: int) -> np.ndarray:
    """Matrix applying the 11x11 Gaussian window ('valid') to each channel of a flat patch."""
    taps = gaussian_window()
    k = taps.size
    out = patch_size - k + 1
    kernel = np.outer(taps, taps)
    mat = np.zeros((patch_size, patch_size, channels, out, out, channels))
    for r in range(out):
        for c in range(out):
            for ch in range(channels):
                mat[r:r + k, c:c + k, ch, r, c, ch] = kernel
    return mat.reshape(patch_size * patch_size * channels, out * out * channels)


def _ssim_numpy(a, b, patch_size, channels):
    f = _ssim_filter_matrix(patch_size, channels)
    mu_a, mu_b = a @ f, b @ f
    var_a = (a * a) @ f - mu_a ** 2
    var_b = (b * b) @ f - mu_b ** 2
    cov = (a * b) @ f - mu_a * mu_b
    c1, c2 = K1 ** 2, K2 ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(np.mean(s))


def distortion(a, b, metric="mse", pixel_scale=1.0) -> float:
    """``mean((s*a - s*b)**2)`` for MSE, ``1 - SSIM`` for SSIM; inputs in [0, 1].

    For SSIM the inputs must be patches shaped (n, P, P, C) or (P, P, C).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"distortion: shape mismatch {a.shape} vs {b.shape}")
    if metric == "mse":
        return float(np.mean(np.square(pixel_scale * (a - b))))
    if metric == "ssim":
        if a.ndim == 3:
            a, b = a[None], b[None]
        if a.ndim != 4 or a.shape[1] != a.shape[2]:
            raise ConfigurationError("SSIM distortion expects square patches (n, P, P, C)")
        p, c = a.shape[1], a.shape[3]
        return 1.0 - _ssim_numpy(a.reshape(len(a), -1), b.reshape(len(b), -1), p, c)
    raise ConfigurationError(f"unknown metric {metric!r}")


def build_distortion(g: Graph, a: Node, b: Node, metric, pixel_scale=1.0, patch_size=None, channels=None) -> Node:
    """Differentiable counterpart of :func:`distortion` for flat (batch, P*P*C) nodes."""
    if metric == "mse":
        return g.scale(g.mean(g.square(g.sub(a, b))), pixel_scale ** 2)
    if metric != "ssim":
        raise ConfigurationError(f"unknown metric {metric!r}")
    f = g.const(_ssim_filter_matrix(patch_size, channels), "ssim_window")
    mu_a, mu_b = g.affine(a, f), g.affine(b, f)
    var_a = g.sub(g.affine(g.square(a), f), g.square(mu_a))
    var_b = g.sub(g.affine(g.square(b), f), g.square(mu_b))
    cov = g.sub(g.affine(g.multiply(a, b), f), g.multiply(mu_a, mu_b))
    c1, c2 = K1 ** 2, K2 ** 2
    num = g.multiply(g.shift(g.scale(g.multiply(mu_a, mu_b), 2.0), c1), g.shift(g.scale(cov, 2.0), c2))
    den = g.multiply(
        g.shift(g.add(g.square(mu_a), g.square(mu_b)), c1),
        g.shift(g.add(var_a, var_b), c2),
    )
    return g.shift(g.scale(g.mean(g.divide(num, den)), -1.0), 1.0)


def objective(rate_bits, d1, d2, cfg: TrainConfig) -> float:
    """Combine per-sample rate (bits) and the two distortions the way the loss graph does."""
    rate = rate_bits if cfg.rate_unit == "bits" else rate_bits * math.log(2.0)
    if cfg.objective == "rd":
        return rate_bits / cfg.patch_size ** 2 + cfg.lambda1 * d1
    return rate + cfg.lambda1 * math.log(d1 + DIST_FLOOR) + cfg.lambda2 * d2


# -- loss graph ----------------------------------------------------------


class LossGraph:
    """Static training graph for one batch size.

    Inputs are the flattened batch and the noise; the nodes ``rate``
    (per-sample rate in bits), ``d1``, ``d2`` and ``total`` are exposed.
    """

    def __init__(self, model: AutoencoderModel, em: EntropyModel, cfg: TrainConfig, batch_size=None):
        self.model, self.em, self.cfg = model, em, cfg
        b = batch_size or cfg.batch_size
        n = model.latent_dim
        g = self.graph = Graph()
        self.x = g.input((b, model.input_dim), "x")
        self.noise = g.input((b, n), "noise")
        y = model.build_encoder(g, self.x)
        dist = dict(metric=cfg.metric, pixel_scale=cfg.pixel_scale if cfg.metric == "mse" else 1.0,
                    patch_size=model.patch_size, channels=model.channels)
        if cfg.objective == "isometric":
            both = model.build_decoder(g, g.concat([y, g.add(y, self.noise)], axis=0))
            x_hat = g.slice(both, 0, b)
            x_noisy = g.slice(both, b, 2 * b)
            bits = em.build_rate(g, y, cfg.alpha)
            self.d1 = build_distortion(g, self.x, x_hat, **dist)
            self.d2 = build_distortion(g, x_hat, x_noisy, **dist)
            self.rate = g.scale(bits, 1.0 / b, "rate")
            rate_term = self.rate if cfg.rate_unit == "bits" else g.scale(self.rate, math.log(2.0))
            fidelity = g.scale(g.log(g.shift(self.d1, DIST_FLOOR)), cfg.lambda1)
            total = g.add(g.add(rate_term, fidelity), g.scale(self.d2, cfg.lambda2))
        else:
            # conventional R + lambda*D baseline: unit-width noise stands in for rounding
            y_noisy = g.add(y, self.noise)
            x_hat = model.build_decoder(g, y_noisy)
            bits = em.build_rate(g, y_noisy, 1.0)
            self.d1 = build_distortion(g, self.x, x_hat, **dist)
            self.d2 = g.const(0.0)
            self.rate = g.scale(bits, 1.0 / b, "rate")
            bpp = g.scale(self.rate, 1.0 / (model.patch_size ** 2))
            total = g.add(bpp, g.scale(self.d1, cfg.lambda1))
        self.total = g.set_output(total)
        self.batch_size = b

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(1.0 if self.cfg.objective == "rd" else self.cfg.alpha)

    def run(self, batch: np.ndarray, noise: np.ndarray, backward=False):
        flat = np.asarray(batch, dtype=np.float64).reshape(self.batch_size, -1)
        try:
            total = float(self.graph.forward([flat, noise]).data)
        except NumericError as exc:
            raise NumericError(f"loss evaluation failed: {exc}") from exc
        if backward:
            self.graph.backward()
        parts = {
            "rate_bits": float(self.graph.value(self.rate)),
            "d1": float(self.graph.value(self.d1)),
            "d2": float(self.graph.value(self.d2)),
        }
        return total, parts


def loss(model, em, batch, cfg: TrainConfig, rng=None, noise=None):
    """Evaluate the training objective on one batch.

    Returns ``(L, parts)`` where ``parts`` holds ``rate_bits`` (per sample),
    ``d1`` and ``d2``. Pass ``noise`` to freeze the perturbation.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.min(initial=0.0) < 0.0 or batch.max(initial=0.0) > 1.0:
        raise ConfigurationError("batch values must lie in [0, 1]")
    lg = LossGraph(model, em, cfg, batch_size=batch.shape[0])
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        noise = lg.noise_spec().sample(rng, (batch.shape[0], model.latent_dim))
    return lg.run(batch, noise)


def loss_gradcheck(cfg: TrainConfig | None = None, batch_size=3, tolerance=1e-5, seed=0) -> GradCheckReport:
    """Finite-difference check of the full objective on a small toy model.

    Noise is drawn once and frozen, so the loss is a deterministic function
    of the parameters.
    """
    cfg = cfg or TrainConfig(patch_size=4, latent_dim=4, seed=seed)
    rng = np.random.default_rng(seed)
    model = AutoencoderModel(cfg.patch_size, cfg.channels, cfg.latent_dim, hidden=(12, 12), seed=seed)
    em = EntropyModel(cfg.latent_dim)
    # move the entropy model off its symmetric initial point
    for t in em.parameters():
        t.data += 0.1 * rng.standard_normal(t.data.shape)
    lg = LossGraph(model, em, cfg, batch_size=batch_size)
    batch = rng.uniform(0.0, 1.0, (batch_size, model.input_dim))
    noise = lg.noise_spec().sample(rng, (batch_size, cfg.latent_dim))
    return grad_check(lg.graph, [batch, noise], tolerance=tolerance)


# -- optimizer / loop ----------------------------------------------------


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad ** 2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    COLUMNS = ("step", "L", "rate_bits", "d1", "d2")

    def append(self, step, total, parts):
        self.rows.append((step, total, parts["rate_bits"], parts["d1"], parts["d2"]))

    def column(self, name) -> np.ndarray:
        return np.array([r[self.COLUMNS.index(name)] for r in self.rows])

    def write_csv(self, path_or_file):
        own = isinstance(path_or_file, (str, Path))
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in self.rows:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        finally:
            if own:
                fh.close()


def train(dataset, cfg: TrainConfig, model=None, em=None, progress_every=0):
    """Fit encoder, decoder and entropy model on ``dataset`` patches (n, P, P, C).

    Deterministic given ``cfg.seed``. Bounds are frozen from CDF quantiles
    once the loop finishes.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim == 3:
        data = data[..., None]
    if len(data) < 1000:
        raise ConfigurationError(f"training needs at least 1000 patches, got {len(data)}")
    if data.shape[1] != cfg.patch_size or data.shape[3] != cfg.channels:
        raise ConfigurationError(
            f"patches {data.shape[1:]} do not match config patch_size={cfg.patch_size}, channels={cfg.channels}"
        )
    if model is None:
        model = AutoencoderModel(cfg.patch_size, cfg.channels, cfg.latent_dim, seed=cfg.seed)
    if em is None:
        em = EntropyModel(model.latent_dim)
    rng = np.random.default_rng(cfg.seed)
    lg = LossGraph(model, em, cfg)
    spec = lg.noise_spec()
    opt = Adam(model.parameters() + em.parameters(), lr=cfg.learning_rate)
    flat = data.reshape(len(data), -1)
    tlog = TrainLog()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(flat), cfg.batch_size)
        noise = spec.sample(rng, (cfg.batch_size, model.latent_dim))
        opt.zero_grad()
        try:
            total, parts = lg.run(flat[idx], noise, backward=True)
        except NumericError as exc:
            raise TrainingDivergedError(step, str(exc)) from exc
        if not math.isfinite(total):
            raise TrainingDivergedError(step, "loss is not finite")
        opt.step()
        tlog.append(step, total, parts)
        if progress_every and step % progress_every == 0:
            log.info("step %d L=%.4f rate=%.3f d1=%.4g d2=%.4g", step, total, *tlog.rows[-1][2:])
    em.fit_bounds()
    return model, em, tlog


# -- isometry ------------------------------------------------------------


ACTIVE_ENERGY_FRACTION = 1e-3


@dataclass
class IsometryReport:
    """Summary of the decoder Gram matrices ``G = J^T A J`` over sampled points.

    Statistics are taken over the *active* latents: channels whose energy
    ``mean(G_ii) * Var(y_i)`` is at least ``ACTIVE_ENERGY_FRACTION`` of the
    total. Collapsed channels carry no rate and no signal, so nothing in the
    objective pins their scale.

    ``max_offdiag_ratio`` is ``max |E[G]_ij| (i != j) / mean diag`` on the
    sample-averaged Gram matrix; ``pointwise_ratio`` averages the same ratio
    computed at each sample.
    """

    mean_diag: float
    max_offdiag_ratio: float
    pointwise_ratio: float
    expected_c: float
    noise_variance: float
    noise_std: float
    active: np.ndarray
    energy: np.ndarray
    diag: np.ndarray
    gram: np.ndarray

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def within(self, ratio_tol=0.2, diag_tol=0.3) -> bool:
        return (
            self.max_offdiag_ratio < ratio_tol
            and math.isfinite(self.expected_c)
            and abs(self.mean_diag - self.expected_c) <= diag_tol * self.expected_c
        )

    def as_dict(self):
        return {
            "mean_diag": self.mean_diag,
            "max_offdiag_ratio": self.max_offdiag_ratio,
            "pointwise_ratio": self.pointwise_ratio,
            "expected_c": self.expected_c,
            "noise_variance": self.noise_variance,
            "noise_std": self.noise_std,
            "active_channels": self.n_active,
            "all_mean_diag": float(self.diag.mean()),
        }


def _offdiag_ratio(gram: np.ndarray) -> float:
    d = np.diag(gram)
    off = np.abs(gram - np.diag(d))
    return float(off.max() / d.mean()) if gram.shape[0] > 1 else 0.0


def _gram_mse(model, y, scale, h):
    n = model.latent_dim
    steps = np.concatenate([y + h * np.eye(n), y - h * np.eye(n)])
    out = model.decode(steps).reshape(2 * n, -1)
    jac = (out[:n] - out[n:]).T / (2 * h)
    if not np.all(np.isfinite(jac)):
        raise NumericError("non-finite Jacobian")
    return scale ** 2 / jac.shape[0] * (jac.T @ jac)


def _gram_polarized(model, y, h, metric="ssim", scale=1.0):
    """G from the metric itself: D(g(y), g(y + h(e_i +/- e_j))) = h^2 (G_ii + G_jj +/- 2 G_ij)."""
    n = model.latent_dim
    eye = np.eye(n)
    base = model.decode(y[None])[0]
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    dec_p = model.decode(np.array([y + h * (eye[i] + eye[j]) for i, j in pairs]))
    dec_m = model.decode(np.array([y + h * (eye[i] - eye[j]) for i, j in pairs]))
    gram = np.zeros((n, n))
    for k, (i, j) in enumerate(pairs):
        dp = distortion(base, dec_p[k], metric, scale)
        if i == j:
            gram[i, i] = dp / (4 * h * h)
        else:
            gram[i, j] = gram[j, i] = (dp - distortion(base, dec_m[k], metric, scale)) / (4 * h * h)
    return gram


def isometry_check(model, em, samples, metric="mse", cfg: TrainConfig | None = None, h=1e-4) -> IsometryReport:
    """Compare the decoder Gram matrix with the constant ``1 / (2 lambda2 var)``.

    For MSE the Jacobian comes from central differences and the metric tensor
    is ``A = s^2 I / n`` (``s`` = pixel scale, ``n`` = values per patch). For
    SSIM the Gram entries are read off the metric by polarization.
    """
    cfg = cfg or TrainConfig()
    patches = np.asarray(samples, dtype=np.float64)
    latents = model.encode(patches)
    grams = []
    for y in latents:
        if metric == "mse":
            grams.append(_gram_mse(model, y, cfg.pixel_scale, h))
        elif metric == "ssim":
            grams.append(_gram_polarized(model, y, max(h, 1e-3)))
        else:
            raise ConfigurationError(f"unknown metric {metric!r}")
    grams = np.array(grams)
    if not np.all(np.isfinite(grams)):
        raise NumericError("non-finite Gram matrix")
    diag = np.diagonal(grams, axis1=1, axis2=2)
    energy = diag.mean(axis=0) * latents.var(axis=0)
    active = energy >= ACTIVE_ENERGY_FRACTION * energy.sum()
    if not active.any():
        active = np.ones_like(active)
    sub = grams[:, active][:, :, active]
    pointwise = float(np.mean([_offdiag_ratio(gm) for gm in sub]))
    noise = NoiseSpec(cfg.alpha)
    expected = math.inf if cfg.lambda2 == 0 else 1.0 / (2 * cfg.lambda2 * noise.variance)
    return IsometryReport(
        mean_diag=float(diag[:, active].mean()),
        max_offdiag_ratio=_offdiag_ratio(sub.mean(axis=0)),
        pointwise_ratio=pointwise,
        expected_c=expected,
        noise_variance=noise.variance,
        noise_std=noise.std,
        active=active,
        energy=energy,
        diag=diag.mean(axis=0),
        gram=grams.mean(axis=0),
    )
