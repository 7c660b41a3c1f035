import sys
from pathlib import Path

import pytest

from siteinspect.providers import StubProvider
from siteinspect.synthetic import write_inspection_set

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def stub():
    return StubProvider()


@pytest.fixture(scope="session")
def planted(tmp_path_factory):
    """25 planted image/audio pairs plus 3 decoys and a regulation corpus (read-only)."""
    return write_inspection_set(tmp_path_factory.mktemp("planted"))


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
