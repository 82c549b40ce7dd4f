"""Collects the acceptance verdict lines and prints them after the run."""

ACCEPTANCE_LINES = []


def record(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_order):
            terminalreporter.write_line(line)


def _order(line: str):
    head = line.split(":", 1)[0].split()
    try:
        return (int(head[1]), line)
    except (IndexError, ValueError):
        return (99, line)
