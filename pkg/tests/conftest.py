import pytest

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record a named acceptance check, print its line, then assert it.

    ``defer=True`` only records, so a test can report several lines first.
    """

    def check(name, ok, detail="", defer=False):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        if not defer:
            assert ok, line
        return ok

    return check


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
