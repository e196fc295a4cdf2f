import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
        _VERDICTS.append(line)
        print(line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
