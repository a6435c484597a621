import numpy as np
import pytest

from ael import MarketParams, SolverConfig, SpreadQuad
from ael.equilibrium import solve_fixed_point


@pytest.fixture(scope="session")
def main_params() -> MarketParams:
    """The default market used throughout: sigma in [0.1, 1.1], rho = 0."""
    return MarketParams(0.1, 1.1, 0.0)


@pytest.fixture(scope="session")
def solved_gamma2(main_params):
    """Converged equilibrium at gamma = 2, shared across test modules."""
    report = solve_fixed_point(main_params, SpreadQuad(2.0), SolverConfig())
    assert report.converged
    return report
