import sys
from pathlib import Path

import pytest

from cfgrewind.ttkv import NS_PER_SECOND, KeyEvent, KeyId

sys.path.insert(0, str(Path(__file__).parent))


def K(path: str, tag: str = "app") -> KeyId:
    return KeyId.of(tag, path)


def sec(x: float) -> int:
    return round(x * NS_PER_SECOND)


def W(path: str, t: float, value="1", tag: str = "app") -> KeyEvent:
    return KeyEvent.write(K(path, tag), sec(t), value)


def D(path: str, t: float, tag: str = "app") -> KeyEvent:
    return KeyEvent.delete(K(path, tag), sec(t))


@pytest.fixture
def write_script(tmp_path):
    def make(name: str, body: str) -> Path:
        path = tmp_path / name
        path.write_text("#!/bin/sh\n" + body)
        path.chmod(0o755)
        return path

    return make


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
