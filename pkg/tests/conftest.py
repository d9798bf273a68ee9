import numpy as np
import pytest

from colecole.experiments import energy_quadrature, fitted_quadrature
from colecole.material import MaterialParams


@pytest.fixture(scope="session")
def quad05():
    """L=20 fit on [0.5, 5] for alpha = 0.5."""
    return energy_quadrature(0.5)


@pytest.fixture(scope="session")
def wide_quad05():
    """Wide-band fit for alpha = 0.5, accurate enough for error studies."""
    return fitted_quadrature(0.5, 40, 1e-3, 1e4)


@pytest.fixture
def unit05():
    return MaterialParams.unit(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line; all lines are echoed in the terminal summary."""

    def report(ok: bool, name: str, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance results")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
