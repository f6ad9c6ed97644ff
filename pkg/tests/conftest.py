import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src.constructor import run_construction  # noqa: E402
from src.operator_model import make_potential  # noqa: E402


@pytest.fixture(scope="module")
def reference_state():
    """Two-stage construction with the default parameters."""
    return run_construction(J=2, epsilon=0.1, L1=2)


@pytest.fixture(scope="module")
def single_stage_state():
    return run_construction(J=1, epsilon=0.1, L1=2)


def random_potential(rng: np.random.Generator, size: int, max_height: float = 3.0):
    """Barriers on a random subset of sites 2..size."""
    sites = [s for s in range(2, size + 1) if rng.random() < 0.5]
    return make_potential((s, float(rng.uniform(0.1, max_height))) for s in sites)
