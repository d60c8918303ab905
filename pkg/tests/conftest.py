"""Collects one verdict line per acceptance criterion and prints them at the end."""

ACCEPTANCE_LINES: dict = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"criterion {criterion:>3}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
