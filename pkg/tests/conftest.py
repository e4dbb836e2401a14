import numpy as np
import pytest
from gammalab.core.log_utils import clear_directory_cache
from gammalab.core.operator_cache import clear_operator_cache
from gammalab.core.settings import clear_settings_cache
from gammalab.grid import Domain


@pytest.fixture(autouse=True)
def fresh_caches():
    """Every test starts from default settings and empty caches."""
    clear_settings_cache()
    clear_operator_cache()
    clear_directory_cache()
    yield
    clear_settings_cache()
    clear_operator_cache()
    clear_directory_cache()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def unit_square():
    return Domain.unit(2, 16)


@pytest.fixture
def unit_interval():
    return Domain.unit(1, 9)


@pytest.fixture
def env_settings(monkeypatch):
    """Set GAMMALAB_* variables and reload the cached settings."""

    def apply(**values):
        for key, value in values.items():
            monkeypatch.setenv(f"GAMMALAB_{key.upper()}", str(value))
        clear_settings_cache()

    return apply
