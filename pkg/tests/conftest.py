import numpy as np
import pytest

from dfmap import kalman


@pytest.fixture(params=kalman.available_backends())
def backend(request):
    """Run a test once per available Kalman kernel implementation."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
