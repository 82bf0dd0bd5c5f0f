import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from epochgd.checks import default_quadratic  # noqa: E402


@pytest.fixture(scope="session")
def quad():
    """The benchmark problem: 5-D, a=1, M=G=4, noise sigma 0.5 truncated at 2."""
    return default_quadratic()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
