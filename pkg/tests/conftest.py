import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """``criterion(k, passed, detail)`` records one acceptance line for the terminal summary."""

    def record(k, passed, detail):
        _RESULTS[k] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        passed, detail = _RESULTS[k]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {k}: {detail}")
