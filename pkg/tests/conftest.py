"""Shared pytest plumbing.

The acceptance tests record one PASS/FAIL line per criterion; the terminal
summary hook echoes them after the run so they are visible regardless of
output capture.
"""

import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(line: str) -> None:
        _ACCEPTANCE_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
