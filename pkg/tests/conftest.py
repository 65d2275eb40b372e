import json
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
TOY = ROOT / "data" / "toy"

_acceptance_lines = []


@pytest.fixture
def record_criterion():
    """Record a PASS/FAIL line for the acceptance summary."""
    def _record(name, ok, detail=""):
        _acceptance_lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}  {detail}".rstrip())
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def toy_dir():
    return TOY
