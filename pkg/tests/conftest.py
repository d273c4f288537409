import shutil
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def config_copy(tmp_path):
    """Copy a shipped config (and its layout) into tmp_path with a local output dir."""

    def make(name: str, output: str = "out", extra: str = "") -> Path:
        for f in CONFIGS.glob("*.txt"):
            shutil.copy(f, tmp_path / f.name)
        text = (CONFIGS / name).read_text()
        lines = [ln for ln in text.splitlines() if not ln.startswith("dir = ")]
        text = "\n".join(lines).replace("[output]", f'[output]\ndir = "{output}"') + "\n" + extra
        path = tmp_path / name
        path.write_text(text)
        return path

    return make
