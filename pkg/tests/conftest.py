import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """``record(n, ok, detail)`` stores one acceptance outcome for the summary."""

    def record(n, ok, detail):
        _ACCEPTANCE[n] = (bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
