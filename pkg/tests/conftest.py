import numpy as np
import pytest

from nuclear_spde.hermite_space import SpectralBasis
from nuclear_spde.noise import LevySpec, WienerSpec
from nuclear_spde.semigroup import SpectralSemigroup


@pytest.fixture
def basis8():
    return SpectralBasis.hermite(8)


@pytest.fixture
def sg8(basis8):
    return SpectralSemigroup(basis8)


@pytest.fixture
def wiener_e1():
    q = np.zeros(8)
    q[0] = 1.0
    return LevySpec.from_wiener(WienerSpec.constant(q))


@pytest.fixture
def levy8(basis8):
    q = np.r_[np.ones(5), np.zeros(3)]
    atoms = np.zeros((3, 8))
    atoms[0, 0] = 0.5
    atoms[1, 1:3] = 0.3
    atoms[2, 0], atoms[2, 4] = 2.0, 1.0
    return LevySpec(WienerSpec.constant(q), drift=np.r_[0.1, 0.0, -0.1, np.zeros(5)],
                    atoms=atoms, weights=[2.0, 1.0, 0.5], basis=basis8)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number, title, passed, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number:>2} {'PASS' if passed else 'FAIL'}"
                                         f"  {title}: {detail}"))
        print(ACCEPTANCE_LINES[-1][1])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
