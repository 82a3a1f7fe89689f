from pathlib import Path

import pytest

from bwconsensus.auth import KeyRing, Validator
from bwconsensus.model import SystemParams

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def params():
    return SystemParams(4, 1)


@pytest.fixture
def keyring():
    return KeyRing(4, b"tests")


@pytest.fixture
def validator(params, keyring):
    return Validator(params, keyring)


@pytest.fixture
def scenario_dir():
    return SCENARIOS


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the assertion still decides the test outcome."""

    def record(ok: bool, detail: str) -> bool:
        line = f"{request.node.name}\t{'PASS' if ok else 'FAIL'}\t{detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
