import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> bool:
        verdict = "PASS" if passed else "FAIL"
        _LINES[number] = f"criterion {number}: {verdict}  {detail}"
        print(_LINES[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
