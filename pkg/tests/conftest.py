import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def verdict(request):
    """Record and print the pass/fail line of an acceptance criterion, then
    assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
