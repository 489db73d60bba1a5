from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"

_acceptance = {}


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    criterion = marker.kwargs.get("criterion", marker.args[0] if marker.args else "?")
    title = marker.kwargs.get("title", marker.args[1] if len(marker.args) > 1 else "")
    entry = _acceptance.setdefault(criterion, {"title": title, "passed": True, "ran": False})
    if report.when == "call" or (report.when == "setup" and report.failed):
        entry["ran"] = True
        if report.failed:
            entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_acceptance, key=lambda c: (str(type(c)), c)):
        entry = _acceptance[criterion]
        status = "PASS" if entry["passed"] and entry["ran"] else "FAIL"
        if not entry["ran"]:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {criterion:>2}: {status}  {entry['title']}")
