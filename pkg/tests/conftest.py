import numpy as np
import pytest

from semloc import _kernels


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile the jitted kernels once so timed tests measure the algorithm
    _kernels.warmup()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
