"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import re

_results: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = m.group(1)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _results[key] = ("PASS" if report.outcome == "passed" else "FAIL", m.group(2).replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_results, key=int):
        status, name = _results[key]
        terminalreporter.write_line(f"criterion {key:>2}: {status}  {name}")
