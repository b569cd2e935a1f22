import numpy as np
import pytest

from erpbpnn import backend


@pytest.fixture(params=backend.available())
def kernels_backend(request):
    """Runs a test once per usable kernel backend."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
