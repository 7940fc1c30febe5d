from contextlib import contextmanager

import pytest

CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion.

    Usage: ``with criterion(7, "transfer") as note: ... note("detail")``.
    """
    @contextmanager
    def track(number: int, title: str):
        details: list[str] = []
        try:
            yield details.append
        except BaseException:
            _record(number, title, "FAIL", details)
            raise
        _record(number, title, "PASS", details)

    return track


def _record(number, title, status, details):
    line = f"criterion {number}: {status} {title}"
    if details:
        line += " | " + "; ".join(details)
    print(line)
    CRITERIA_LINES.append(line)
