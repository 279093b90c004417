import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from sslgm.cohort import CohortSpec, generate_cohort, reference_model
from sslgm.learning import FitConfig, backward_labeling_em


@pytest.fixture(scope="session")
def reference():
    return reference_model(separation=2.0)


@pytest.fixture(scope="session")
def train_cohort(reference):
    return generate_cohort(CohortSpec(2000, reference, seed=0))


@pytest.fixture(scope="session")
def fitted(train_cohort):
    return backward_labeling_em(train_cohort.records, FitConfig(N=3))


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, title, passed, detail)."""
    def record(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title} ({detail})"
        _CRITERIA[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
