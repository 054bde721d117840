import math

import pytest

from riskshift.calibration import calibrate
from riskshift.dist import MarketModel
from riskshift.pareto import Reservation
from riskshift.utilities import EconomicParams


@pytest.fixture(scope="session")
def cal():
    return calibrate()


@pytest.fixture(scope="session")
def model(cal):
    return cal.model


@pytest.fixture(scope="session")
def econ(cal):
    return EconomicParams(c0=cal.c0, w0=1.34, beta=30.0)


@pytest.fixture(scope="session")
def res_c0(cal):
    return Reservation("shareholder", cal.c0)


@pytest.fixture(scope="session")
def indep_model():
    # X, R independent with E[R] = 0
    s = 0.15
    return MarketModel(mu_y=-0.5 * s * s, sigma_y=s, mu_z=math.log(0.9) - 0.5 * 0.03**2,
                       sigma_z=0.03, rho_corr=0.0)
