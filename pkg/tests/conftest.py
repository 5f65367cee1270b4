import numpy as np
import pytest

from surrogate_gsc.qsim import load_qubit_config


@pytest.fixture(scope="session")
def general():
    return load_qubit_config("general")


@pytest.fixture(scope="session")
def general_quiet(general):
    return general.with_noise(enabled=False)


@pytest.fixture(scope="session")
def specific():
    return load_qubit_config("specific")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
