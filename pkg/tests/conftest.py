import numpy as np
import pytest

from gptlab import models


@pytest.fixture(scope="session")
def ost():
    return models.build_oblate_stabilizer()


@pytest.fixture(scope="session")
def ost_r1():
    return models.build_oblate_stabilizer(1.0)


@pytest.fixture(scope="session")
def gbit():
    return models.build_gbit()


@pytest.fixture(scope="session")
def composite():
    return models.build_composite()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240522)
