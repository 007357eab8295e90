import functools

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def _settled(name):
    from tensarm.lab import settled_builtin

    return settled_builtin(name)


@pytest.fixture(scope="session")
def settled_builtin():
    """Callable returning (structure, info, settled state, converged) for a built-in, cached per session."""
    return _settled
