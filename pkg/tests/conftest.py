import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    outcomes = getattr(mod, "OUTCOMES", None)
    if outcomes:
        terminalreporter.section("acceptance criteria")
        for n in sorted(outcomes):
            terminalreporter.write_line(outcomes[n])
