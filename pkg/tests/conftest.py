"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

import pytest

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = _outcomes.setdefault(
        number, {"title": title, "passed": True, "tests": 0, "failed": [], "details": []}
    )
    if report.when == "call":
        entry["tests"] += 1
        entry["details"].extend(v for k, v in report.user_properties if k == "detail")
    if report.failed:
        entry["passed"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        entry = _outcomes[number]
        status = "PASS" if entry["passed"] else "FAIL"
        line = f"[{status}] criterion {number:2d}: {entry['title']} ({entry['tests']} tests)"
        if entry["failed"]:
            line += " failed: " + ", ".join(entry["failed"])
        terminalreporter.write_line(line)
        for detail in entry["details"]:
            terminalreporter.write_line(f"      {detail}")
