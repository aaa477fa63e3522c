import numpy as np
import pytest

from latticespread import kernels

BACKENDS = sorted(kernels.backends())


@pytest.fixture(params=BACKENDS)
def kernel_backend(request, monkeypatch):
    """Run the test once per available kernel implementation."""
    mod = kernels.backends()[request.param]
    monkeypatch.setattr(kernels, "trig_sums", mod.trig_sums)
    monkeypatch.setattr(kernels, "marching_squares", mod.marching_squares)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
