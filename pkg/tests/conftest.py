"""Shared pytest hooks: per-criterion summary for the acceptance suite.

Tests marked ``@pytest.mark.criterion("<title>")`` are grouped by title;
the terminal summary ends with one PASS/FAIL line per title so the
acceptance status is readable without scanning individual test ids.
Several tests may share a title; the criterion passes only if all of
them do.
"""

import pytest

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(title): groups tests under one acceptance criterion",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    title = mark.args[0]
    if report.when == "call":
        ok = report.passed
    elif report.failed:
        ok = False  # setup or teardown error counts against the criterion
    else:
        return
    _CRITERIA[title] = _CRITERIA.get(title, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    width = max(len(t) for t in _CRITERIA)
    for title, ok in _CRITERIA.items():
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{title.ljust(width)}  {verdict}")
