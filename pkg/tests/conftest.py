import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


def pytest_configure(config):
    config.odaf_criteria = []


@pytest.fixture
def record_criterion(request):
    """Append one (number, name, passed, detail) line to the acceptance summary."""

    def record(number: int, name: str, passed: bool, detail: str) -> None:
        request.config.odaf_criteria.append((number, name, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(getattr(config, "odaf_criteria", []))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in lines:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  [{number:2d}] {name}: {detail}")
