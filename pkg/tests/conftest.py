import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from movid.config import TrainConfig
from movid.geometry import NoiseSpec, camera_grid, make_dataset
from movid.netcore.model import EncoderConfig
from movid.pipeline import PoseModel

settings.register_profile("movid", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("movid")

TINY = EncoderConfig(d_view=8, d_motion=8, d_base=8, n_bases=2, hidden=12, view_hidden=10,
                     dropout=0.1, window=4)


@pytest.fixture(scope="session")
def grid():
    return camera_grid()


@pytest.fixture(scope="session")
def small_dataset(grid):
    """Six clips (one per motion kind) rendered from all 16 grid cameras."""
    return make_dataset(6, grid, T=12, noise=NoiseSpec(1.0, 0.02), seed=5)


@pytest.fixture(scope="session")
def tiny_model():
    return PoseModel.create(TINY, seed=3)


@pytest.fixture(scope="session")
def tiny_config():
    return TrainConfig.desk(epochs=2, batch_size=8, seed=4).with_model(**vars(TINY))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def axis_angle(axis, angle) -> np.ndarray:
    """Rodrigues' formula, independent of the package's rotation helpers."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * Kx + (1 - math.cos(angle)) * Kx @ Kx


ACCEPTANCE_LINES: list[str] = []


def report_criterion(label: str, ok: bool, detail: str) -> None:
    """Record one acceptance verdict line and fail the calling test if it is FAIL."""
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
