import numpy as np
import pytest

from bosonbus.model import ModelParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def generic_params():
    """Asymmetric point with all five parameters distinct and nonzero."""
    return ModelParams(omega_a0=1.3, omega_b0=0.7, omega=1.0, lambda_a=0.5, lambda_b=-0.4)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
