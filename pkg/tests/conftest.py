import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

DATA = Path(__file__).resolve().parents[1] / "src" / "viewplan" / "data"


@pytest.fixture(scope="session")
def room_path():
    return DATA / "room" / "scene.json"


@pytest.fixture(scope="session")
def case_study_path():
    return DATA / "case_study" / "scene.json"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
