"""Collects acceptance verdicts and prints one PASS/FAIL line per criterion at the end of the run."""
import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from acceptance_log import VERDICTS  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        ok, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
