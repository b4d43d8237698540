import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test gates")
    config.addinivalue_line("markers", "slow: trains a model for hundreds of steps")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    names = [m.args[0] for m in getattr(report, "criterion_marks", [])]
    for name in names:
        _CRITERIA.append((name, report.outcome, report.nodeid))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    report.criterion_marks = list(item.iter_markers("criterion"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, nodeid in _CRITERIA:
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{status:5s} {name}  ({nodeid.split('::')[-1]})")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)
