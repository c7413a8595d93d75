import numpy as np
import pytest

import subelliptic as se


@pytest.fixture(scope="session")
def heis():
    return se.heisenberg_system()


@pytest.fixture(scope="session")
def euclid2():
    return se.euclidean_system(2)


@pytest.fixture(scope="session")
def euclid3():
    return se.euclidean_system(3)


@pytest.fixture(scope="session")
def grushin():
    return se.grushin_system()


@pytest.fixture(scope="session")
def gauge_heis():
    return se.GaugeOracle("heisenberg")


@pytest.fixture(scope="session")
def gauge_euclid2():
    return se.GaugeOracle("euclidean", n=2)


@pytest.fixture(scope="session")
def sublap2():
    return se.sublaplacian_operator(2)


@pytest.fixture(scope="session")
def infinity2():
    return se.infinity_operator(2)


@pytest.fixture(scope="session")
def pnorm4():
    return se.pnorm_operator(4.0, 2)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
