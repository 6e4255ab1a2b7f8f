"""Shared fixtures; collects acceptance verdicts and prints them after the run."""

import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Call ``verdict(tag, ok, detail)`` once per acceptance criterion."""

    def record(tag: str, ok: bool, detail: str):
        _VERDICTS.append((tag, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for tag, ok, detail in sorted(_VERDICTS, key=lambda v: int(v[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {tag}: {detail}")
