import numpy as np
import pytest

from fsa import kernels, parallel


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Compile (or load from cache) every kernel before any test times anything."""
    kernels.warmup(np.float64)
    kernels.warmup(np.float32)


@pytest.fixture
def restore_workers():
    before = parallel.get_workers()
    yield
    parallel.set_workers(before)
