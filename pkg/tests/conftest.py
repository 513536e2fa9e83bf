from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dzcodec.imageio import load_ppm
from dzcodec.model import EntropyModel, load_model

DATA = Path(__file__).parent / "data"

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy():
    """Small checked-in model: 4x4 grayscale patches, 4 latents."""
    return load_model(DATA / "toy_model.iqdzm")


@pytest.fixture(scope="session")
def fixture_pair():
    return load_ppm(DATA / "fixture_gray.pgm"), load_ppm(DATA / "fixture_gray_blur.pgm")


class LogisticCDF:
    """Duck-typed entropy model whose every channel is a standard logistic CDF."""

    def __init__(self, channels=1, loc=0.0, scale=1.0):
        self.channels = channels
        self.loc, self.scale = loc, scale
        self.bounds = np.tile([-8.0, 8.0, 0.0], (channels, 1))

    def cdf(self, values):
        v = np.asarray(values, dtype=np.float64)
        return 1.0 / (1.0 + np.exp(-(v - self.loc) / self.scale))

    def cdf_eval(self, channel, y):
        return float(self.cdf(np.array([[y]]))[0, 0])

    y_min = property(lambda self: self.bounds[:, 0])
    y_max = property(lambda self: self.bounds[:, 1])
    medians = property(lambda self: self.bounds[:, 2])


def logistic_entropy_model(channels=1) -> EntropyModel:
    """A real EntropyModel that reduces to the standard logistic CDF."""
    return EntropyModel(channels, filters=(), init_scale=1.0)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
