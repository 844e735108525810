"""Shared acceptance reporting.

The acceptance tests call :func:`record_criterion` with their verdict;
after the run a terminal section prints one line per criterion so the
whole checklist is readable at a glance even under ``-q``.
"""

CRITERIA: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, status: str, detail: str = "") -> None:
    CRITERIA[number] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        status, detail = CRITERIA[number]
        line = f"CRITERION {number:2d} {status}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
