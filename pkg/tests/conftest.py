import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dpgs.bench import plant_labeled, reference_spec
from dpgs.core import derive_rng

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def reference_plant():
    """The two-class reference mixture, planted once per session."""
    return plant_labeled(reference_spec(), derive_rng(0, "plant"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""

    def record(number, name, passed, detail):
        line = f"criterion {number:>2} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
