"""Shared pytest hooks: the acceptance suite reports one line per criterion."""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: float(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
