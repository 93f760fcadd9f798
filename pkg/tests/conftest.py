import pytest

_CRITERIA: list[tuple[int, bool, str]] = []


@pytest.fixture
def criterion():
    """Record an acceptance verdict, print it, and fail the test when it does not hold."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _CRITERIA.append((number, ok, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(_CRITERIA, key=lambda item: item[0]):
        terminalreporter.write_line(line)
