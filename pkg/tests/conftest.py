import numpy as np
import pytest

from backward_lq import (BlqaClosedForm, RegressionBasis, blqb_preset, generate_brownian,
                         solve_phi, solve_riccati)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def blqa():
    return BlqaClosedForm()


@pytest.fixture(scope="session")
def blqa_small(blqa):
    """blqa on a coarse grid with a few thousand paths."""
    spec = blqa.spec(64)
    riccati = solve_riccati(spec, 1000)
    ens = generate_brownian(7, 4000, spec.grid)
    sol = solve_phi(spec, riccati.upsilon, ens, RegressionBasis())
    return spec, riccati, ens, sol


@pytest.fixture(scope="session")
def blqb_small():
    spec = blqb_preset(64)
    riccati = solve_riccati(spec, 1000)
    ens = generate_brownian(7, 4000, spec.grid)
    return spec, riccati, ens


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
