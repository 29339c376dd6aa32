import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from fixtures import grid_plane, icosphere  # noqa: E402
from settings import RunConfig  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs on small synthetic meshes")


@pytest.fixture
def small_config():
    """Coarse settings that keep the end-to-end tests to a few seconds."""
    return RunConfig(
        quad_length=0.1,
        grid_resolution=8,
        atom_count=8,
        sparsity=2,
        ksvd_iterations=3,
        smoothing_iterations=5,
        threads=1,
        progress=False,
        seed=0,
    )


@pytest.fixture
def plane():
    return grid_plane(41, 1.0)


@pytest.fixture
def sphere():
    return icosphere(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
