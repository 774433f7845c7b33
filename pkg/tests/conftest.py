import numpy as np
import pytest
from hypothesis import settings

from mmot.costs import PowerLawCost
from mmot.measures import DiscreteMeasure

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def coulomb():
    return PowerLawCost(1.0)


@pytest.fixture
def two_dirac():
    return DiscreteMeasure(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))


@pytest.fixture
def uniform8():
    return DiscreteMeasure.uniform(np.arange(8.0)[:, None])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line[1])
