import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dzcodec.autodiff import Graph, Tensor
from dzcodec.data import synthetic_patches
from dzcodec.errors import ConfigurationError, NumericError, TrainingDivergedError
from dzcodec.model import AutoencoderModel, EntropyModel, model_hash
from dzcodec.training import (
    Adam,
    NoiseSpec,
    TrainConfig,
    TrainLog,
    build_distortion,
    distortion,
    isometry_check,
    loss,
    loss_gradcheck,
    objective,
    train,
)


def test_table_defaults():
    cfg = TrainConfig()
    assert (cfg.lambda1, cfg.lambda2, cfg.alpha, cfg.batch_size) == (5.0, 0.2, 0.2, 8)
    ssim_cfg = TrainConfig.for_metric("ssim")
    assert (ssim_cfg.lambda1, ssim_cfg.lambda2, ssim_cfg.alpha) == (1.0, 256.0, 0.2)


def test_config_file(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\nlambda1 = 3\nsteps=20  # inline\nmetric = mse\n\n")
    cfg = TrainConfig.from_file(path)
    assert cfg.lambda1 == 3.0 and cfg.steps == 20 and cfg.lambda2 == 0.2


@pytest.mark.parametrize("text", ["bogus = 1\n", "lambda1\n", "alpha = 1.5\n", "lambda1 = -1\n", "metric = l1\n"])
def test_bad_config_file(tmp_path, text):
    path = tmp_path / "cfg.txt"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_file(path)


def test_objective_example():
    cfg = TrainConfig(rate_unit="bits")
    # P = 0.5 -> 1 bit; D = e -> ln = 1; D2 = 2
    assert objective(1.0, math.e, 2.0, cfg) == pytest.approx(1 + 5 * 1 + 0.2 * 2, abs=1e-8)
    assert objective(1.0, math.e, 2.0, TrainConfig()) == pytest.approx(math.log(2) + 5.4, abs=1e-8)


def test_noise_spec():
    spec = NoiseSpec(0.2)
    assert spec.variance == pytest.approx(0.04 / 12)
    assert spec.std == pytest.approx(math.sqrt(0.04 / 12))
    s = spec.sample(np.random.default_rng(0), (200_000,))
    assert np.all(np.abs(s) <= 0.1)
    assert s.var() == pytest.approx(spec.variance, rel=0.02)


# -- distortion ------------------------------------------------------------------


def test_distortion_identity_and_extremes():
    a = np.random.default_rng(0).uniform(size=(2, 12, 12, 1))
    assert distortion(a, a, "mse") == 0.0
    assert distortion(a, a, "ssim") == pytest.approx(0.0, abs=1e-12)
    assert distortion(np.zeros((1, 4, 4, 1)), np.ones((1, 4, 4, 1)), "mse") == 1.0


def test_distortion_mse_brute_force():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(3, 4, 4, 1)), rng.uniform(size=(3, 4, 4, 1))
    want = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert distortion(a, b, "mse") == pytest.approx(want, rel=1e-12)
    assert distortion(a, b, "mse", pixel_scale=255.0) == pytest.approx(want * 255 ** 2, rel=1e-12)


def test_distortion_shape_mismatch():
    with pytest.raises(ConfigurationError):
        distortion(np.zeros((1, 4, 4, 1)), np.zeros((1, 4, 5, 1)))


@pytest.mark.parametrize("metric, size", [("mse", 4), ("ssim", 12)])
def test_graph_distortion_matches_numpy(metric, size):
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(2, size * size)), rng.uniform(size=(2, size * size))
    g = Graph()
    xa, xb = g.input(a.shape), g.input(b.shape)
    g.set_output(build_distortion(g, xa, xb, metric, patch_size=size, channels=1))
    got = float(g.forward([a, b]).data)
    want = distortion(a.reshape(2, size, size, 1), b.reshape(2, size, size, 1), metric)
    assert got == pytest.approx(want, rel=1e-10)


# -- loss ------------------------------------------------------------------------


def _toy(cfg):
    return AutoencoderModel(cfg.patch_size, cfg.channels, cfg.latent_dim, hidden=(12,), seed=1), EntropyModel(cfg.latent_dim)


def test_loss_parts_are_consistent():
    cfg = TrainConfig(patch_size=4, latent_dim=3)
    model, em = _toy(cfg)
    batch = synthetic_patches(1000, 4, seed=0)[:5]
    noise = NoiseSpec(cfg.alpha).sample(np.random.default_rng(0), (5, 3))
    total, parts = loss(model, em, batch, cfg, noise=noise)
    assert total == pytest.approx(objective(parts["rate_bits"], parts["d1"], parts["d2"], cfg), rel=1e-12)
    # rate oracle: the entropy model's own numeric rate of the clean latents
    y = model.encode(batch)
    assert parts["rate_bits"] == pytest.approx(em.rate_bits(y, cfg.alpha) / 5, rel=1e-10)
    assert parts["d1"] == pytest.approx(distortion(batch, model.decode(y), "mse", 255.0), rel=1e-10)


def test_zero_noise_gives_zero_d2():
    cfg = TrainConfig(patch_size=4, latent_dim=3)
    model, em = _toy(cfg)
    _, parts = loss(model, em, synthetic_patches(1000, 4, seed=0)[:4], cfg, noise=np.zeros((4, 3)))
    assert parts["d2"] == 0.0


def test_loss_rejects_out_of_range_pixels():
    cfg = TrainConfig(patch_size=4, latent_dim=3)
    with pytest.raises(ConfigurationError):
        loss(*_toy(cfg), np.full((2, 4, 4, 1), 2.0), cfg)


@pytest.mark.parametrize(
    "cfg",
    [
        TrainConfig(patch_size=4, latent_dim=4),
        TrainConfig(patch_size=4, latent_dim=4, rate_unit="bits"),
        TrainConfig(patch_size=4, latent_dim=4, objective="rd", lambda1=0.01),
        TrainConfig.for_metric("ssim", patch_size=11, latent_dim=3),
    ],
    ids=["mse", "mse-bits", "rd-baseline", "ssim"],
)
def test_full_loss_gradcheck(cfg):
    report = loss_gradcheck(cfg, batch_size=2)
    assert report.passed and report.max_error < 1e-5


def test_adam_minimizes_quadratic():
    t = Tensor(np.array([3.0, -2.0]))
    opt = Adam([t], lr=0.1)
    for _ in range(500):
        t.grad = 2 * (t.data - 1.0)
        opt.step()
    np.testing.assert_allclose(t.data, 1.0, atol=1e-3)


# -- training loop -----------------------------------------------------------------


def test_training_is_deterministic():
    data = synthetic_patches(1000, 4, seed=2)
    cfg = TrainConfig(patch_size=4, latent_dim=4, steps=40, seed=3)
    a = train(data, cfg)
    b = train(data, cfg)
    assert model_hash(a[0], a[1]) == model_hash(b[0], b[1])
    assert a[2].rows == b[2].rows


def test_training_loss_decreases():
    data = synthetic_patches(4000, 8, seed=3)
    _, _, log = train(data, TrainConfig(steps=2000, seed=11))
    total = log.column("L")
    assert np.median(total[-100:]) < np.median(total[:100])


def test_training_input_validation():
    with pytest.raises(ConfigurationError):
        train(synthetic_patches(999, 8), TrainConfig(steps=1))
    with pytest.raises(ConfigurationError):
        train(synthetic_patches(1000, 4), TrainConfig(steps=1))


def test_divergence_reports_step():
    cfg = TrainConfig(patch_size=4, latent_dim=4, steps=5)
    model = AutoencoderModel(4, 1, 4, seed=0)
    model.parameters()[0].data[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train(synthetic_patches(1000, 4), cfg, model=model)
    assert info.value.step == 0


def test_train_log_csv():
    log = TrainLog()
    log.append(0, 1.5, {"rate_bits": 2.0, "d1": 3.0, "d2": 4.0})
    buf = io.StringIO()
    log.write_csv(buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["step", "L", "rate_bits", "d1", "d2"]
    assert [float(v) for v in rows[1]] == [0, 1.5, 2.0, 3.0, 4.0]


# -- isometry ----------------------------------------------------------------------


class LinearDecoder:
    """Decoder ``x = 0.5 + k U y`` with orthonormal columns U: G = (s k)^2 / n * I exactly."""

    def __init__(self, n_latent=4, patch=4, c=750.0, scale=255.0, seed=0):
        self.latent_dim, self.patch_size, self.channels = n_latent, patch, 1
        n_pix = patch * patch
        self.u, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(n_pix, n_latent)))
        self.k = math.sqrt(c * n_pix) / scale

    def encode(self, patches):
        x = np.asarray(patches).reshape(len(patches), -1) - 0.5
        return x @ self.u / self.k

    def decode(self, y):
        y = np.atleast_2d(y)
        return (0.5 + self.k * y @ self.u.T).reshape(len(y), self.patch_size, self.patch_size, 1)


def test_isometry_of_constructed_linear_decoder():
    dec = LinearDecoder(c=750.0)
    patches = synthetic_patches(1000, 4, seed=0)[:10]
    report = isometry_check(dec, None, patches, "mse", TrainConfig(patch_size=4, latent_dim=4))
    assert report.mean_diag == pytest.approx(750.0, rel=1e-6)
    assert report.max_offdiag_ratio < 1e-6 and report.pointwise_ratio < 1e-6
    assert report.expected_c == pytest.approx(750.0)
    assert report.within()
    assert report.noise_variance == pytest.approx(0.04 / 12) and report.noise_std == pytest.approx(0.2 / math.sqrt(12))


@given(st.floats(0.05, 0.9), st.floats(0.01, 10))
def test_expected_constant(alpha, lam2):
    report_c = 1.0 / (2 * lam2 * alpha ** 2 / 12)
    dec = LinearDecoder(c=report_c)
    cfg = TrainConfig(patch_size=4, latent_dim=4, alpha=alpha, lambda2=lam2)
    report = isometry_check(dec, None, synthetic_patches(1000, 4, seed=0)[:2], "mse", cfg)
    assert report.expected_c == pytest.approx(report_c, rel=1e-12)
    assert report.mean_diag == pytest.approx(report_c, rel=1e-5)


def test_isometry_nonfinite_jacobian():
    dec = LinearDecoder()
    dec.decode = lambda y: np.full((len(np.atleast_2d(y)), 4, 4, 1), np.nan)
    with pytest.raises(NumericError):
        isometry_check(dec, None, synthetic_patches(1000, 4)[:2], "mse", TrainConfig(patch_size=4, latent_dim=4))


def test_polarized_gram_recovers_exact_gram():
    from dzcodec.training import _gram_mse, _gram_polarized

    dec = LinearDecoder(n_latent=3, patch=4, c=300.0, seed=2)
    y = np.array([0.1, -0.2, 0.05])
    exact = _gram_mse(dec, y, 255.0, 1e-4)
    np.testing.assert_allclose(exact, 300.0 * np.eye(3), atol=1e-6)
    np.testing.assert_allclose(_gram_polarized(dec, y, 1e-3, "mse", 255.0), exact, atol=1e-6)


def test_isometry_ssim_path_runs():
    dec = LinearDecoder(n_latent=2, patch=12, c=100.0)
    cfg = TrainConfig.for_metric("ssim", patch_size=12, latent_dim=2)
    report = isometry_check(dec, None, synthetic_patches(1000, 12, seed=0)[:2], "ssim", cfg)
    assert report.mean_diag > 0 and np.all(np.isfinite(report.gram))
    np.testing.assert_allclose(report.gram, report.gram.T)
