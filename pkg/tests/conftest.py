import pytest

_LINES = []


@pytest.fixture
def criterion():
    """record(n, ok, detail) prints one pass/fail line and keeps it for the summary."""
    def record(n, ok, detail=""):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append((n, line))
        print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
