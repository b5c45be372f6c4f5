import pytest

from levypide.analytic_pricers import EuropeanOption, MarketScenario
from levypide.levy_measures import LevyMeasureSpec
from levypide.portfolio_alpha import PortfolioProblem

PENSION_MU = [0.1, 0.05]
PENSION_SIGMA = [[0.09, -4.5e-4], [-4.5e-4, 1e-4]]
TABLE_SPOTS = [85.2144, 88.692, 92.3116, 96.0789, 100.0, 104.081, 108.329, 112.75]


@pytest.fixture
def put_scenario():
    return MarketScenario(sigma=0.23, r=0.0, option=EuropeanOption(strike=100.0, maturity=1.0, kind='put'))


@pytest.fixture
def call_scenario():
    return MarketScenario(sigma=0.23, r=0.05, option=EuropeanOption(strike=100.0, maturity=1.0, kind='call'))


@pytest.fixture
def merton():
    return LevyMeasureSpec.merton(lam=0.1, m=-0.2, delta=0.15)


@pytest.fixture
def vg():
    return LevyMeasureSpec.variance_gamma(theta=-0.43, sigma=0.23, kappa=0.27)


@pytest.fixture
def kou():
    return LevyMeasureSpec.kou(lam=1.0, p=0.4, lam_plus=10.0, lam_minus=5.0)


@pytest.fixture
def nig():
    return LevyMeasureSpec.nig(theta=-0.1, sigma=0.2, kappa=0.5)


@pytest.fixture
def pension_problem():
    return PortfolioProblem(PENSION_MU, PENSION_SIGMA)
