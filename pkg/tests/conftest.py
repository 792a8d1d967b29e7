import pytest

_LINES = []


@pytest.fixture
def report():
    """Record a one-line acceptance verdict; all lines are echoed at the end of the run."""

    def add(number, passed, detail):
        tag = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        line = f"criterion {number:2d}: {tag:8s} {detail}"
        _LINES.append((number, line))
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
