import numpy as np
import pytest

from sdeloc.core import TrainParams
from sdeloc.sim import SimConfig, build_synthetic_radio_map


@pytest.fixture(scope="session")
def small_config():
    # 10 m x 1 m, 63 RPs, 12 APs: fast enough for per-test training
    return SimConfig(hallway_length=10.0, hallway_width=1.0, n_aps=12, n_queries=120,
                     n_unlabeled=150, samples_per_rp=2, seed=3)


@pytest.fixture(scope="session")
def small_testbed(small_config):
    return build_synthetic_radio_map(small_config)


@pytest.fixture(scope="session")
def small_params():
    return TrainParams(intrinsic_dim=4, match_threshold=6, update_ratio=0.5)


@pytest.fixture(scope="session")
def default_testbed():
    return build_synthetic_radio_map(SimConfig())


def two_blobs(n_per=15, dim=6, gap=40.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(-70.0, 1.0, (n_per, dim))
    b = rng.normal(-70.0 + gap, 1.0, (n_per, dim))
    b = np.minimum(b, 0.0)
    return np.vstack([a, b]), np.repeat([1, 2], n_per)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
