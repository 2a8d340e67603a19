import sys

import numpy as np
import pytest

from enkf1d.model import new_model


@pytest.fixture
def unit():
    return new_model(1.0, 1.0, 1.0, 1.0)


@pytest.fixture
def unstable():
    return new_model(1.2, 1.0, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    report = {}
    for name, module in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            report.update(getattr(module, "REPORT", {}))
    if report:
        terminalreporter.section("acceptance criteria")
        for number in sorted(report):
            terminalreporter.write_line(report[number])
