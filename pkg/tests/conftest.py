import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

VERDICTS: list[tuple[int, bool, str]] = []


class Verdict:
    """Records a PASS/FAIL line for one acceptance criterion, then asserts it."""

    def __call__(self, number: int, ok: bool, detail: str):
        VERDICTS.append((number, bool(ok), detail))
        assert ok, f"criterion {number}: {detail}"


@pytest.fixture
def verdict():
    return Verdict()


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
