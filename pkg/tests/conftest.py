import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict that is echoed in the terminal summary."""
    def record(criterion: int, ok: bool, detail: str):
        _VERDICTS.append(f"CRITERION {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        print(_VERDICTS[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
