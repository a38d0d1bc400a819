import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for a criterion; all lines are repeated in
    the terminal summary so they survive output capture."""

    def emit(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
