"""Shared pytest hooks.

The acceptance tests record one PASS/FAIL line per criterion; printing them
from inside a test would be swallowed by output capture, so they are stashed
here and echoed in the terminal summary.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
