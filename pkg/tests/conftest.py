import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, list[str]] = {}
_TITLES: dict[int, str] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _TITLES[marker[0]] = marker[1]
        _CRITERIA.setdefault(marker[0], []).append("PASS" if report.passed else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        verdict = "PASS" if all(v == "PASS" for v in _CRITERIA[n]) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {verdict}  {_TITLES[n]}")
