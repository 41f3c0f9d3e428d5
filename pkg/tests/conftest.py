import numpy as np
import pytest

from oscilab.frequency import FrequencySpec
from oscilab.symbol_algebra import WeylSymbol


def torus_point(E1, E2, a, b):
    """Phase point with actions (E1, E2) and angles (a, b)."""
    r1, r2 = np.sqrt(2 * E1), np.sqrt(2 * E2)
    return np.array([r1 * np.cos(a), r2 * np.cos(b), r1 * np.sin(a), r2 * np.sin(b)])


def sqrt2_spec():
    return FrequencySpec.from_json(
        {"d": 2, "nu": [[1, 0], [0, 1]], "v": [{"rat": [1, 1]}, {"surd": {"rat": [1, 1], "root": 2}}]}
    )


@pytest.fixture
def spec11():
    return FrequencySpec.from_omega_int([1, 1])


@pytest.fixture
def spec12():
    return FrequencySpec.from_omega_int([1, 2])


@pytest.fixture
def spec_sqrt2():
    return sqrt2_spec()


@pytest.fixture
def x1x2():
    return WeylSymbol.x(0, 2) * WeylSymbol.x(1, 2)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
