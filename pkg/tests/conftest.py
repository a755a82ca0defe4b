import numpy as np
import pytest

from invisitrack.synth import RigSpec, build_rig
from invisitrack.template import build_chain_template, build_grid_template

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid():
    return build_grid_template(13, 15, 20.0)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid_template(4, 5, 20.0)


@pytest.fixture(scope="session")
def chain():
    return build_chain_template(10, 12.7)


@pytest.fixture(scope="session")
def rig():
    return build_rig(RigSpec())


@pytest.fixture
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion for the summary."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})")
        print(_ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
