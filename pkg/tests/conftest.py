"""Collects the outcome of each acceptance check and prints a PASS/FAIL summary."""

import re

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_(\d{2})_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.when == "call" or report.failed or (report.when == "setup" and report.skipped):
        ok = report.passed if report.when == "call" else False
        _ACCEPTANCE[key] = _ACCEPTANCE.get(key, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for (num, name), ok in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {num:2d} {name}")
