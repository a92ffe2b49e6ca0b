"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

from types import SimpleNamespace

import pytest

_verdicts = {}


@pytest.fixture
def verdict(request):
    """Per-test record; set ``.criterion`` first and ``.detail`` as measurements come in."""
    record = SimpleNamespace(criterion=request.node.name, detail="", passed=None)
    _verdicts[request.node.nodeid] = record
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    record = _verdicts.get(item.nodeid)
    if record is not None and report.when == "call":
        record.passed = report.passed
        line = f"{'PASS' if report.passed else 'FAIL'}  {record.criterion}  {record.detail}"
        print(f"\n{line}")
        report.sections.append(("acceptance", line))


def pytest_terminal_summary(terminalreporter):
    records = [r for r in _verdicts.values() if r.passed is not None]
    if not records:
        return
    terminalreporter.section("acceptance criteria")
    for r in records:
        terminalreporter.write_line(f"{'PASS' if r.passed else 'FAIL'}  {r.criterion}  {r.detail}")
