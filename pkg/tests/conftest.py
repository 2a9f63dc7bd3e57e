import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from proxyprox.data_io import find_dataset, load_mushrooms, make_mushrooms_surrogate, scale_features

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES: dict = {}


def record_acceptance(key: str, passed, detail: str) -> None:
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    ACCEPTANCE_LINES[key] = f"{key:<14} {status}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k[1:].split()[0].split("[")[0]), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def surrogate():
    """Scaled synthetic stand-in shaped like the mushrooms data (8124 x 112)."""
    return scale_features(make_mushrooms_surrogate(seed=0), "unit_columns")


@pytest.fixture(scope="session")
def mushrooms():
    """The real dataset from $PROXYPROX_DATA_DIR, or None when absent."""
    if find_dataset("mushrooms") is None:
        return None
    return load_mushrooms()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
