import numpy as np
import pytest

from phasemhd.mesh import build_mesh

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])


@pytest.fixture
def verdict(request, capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        lines[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return report


@pytest.fixture
def unit_square():
    return build_mesh(2, ((0.0, 0.0), (1.0, 1.0)), 4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
