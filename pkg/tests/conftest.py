import pytest

from occudev import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jit kernels once so individual tests do not pay for it."""
    _kernels.warmup()
