import numpy as np
import pytest

from hotemboss.fixtures import box_mesh
from hotemboss.material import default_pmma_card, elastic_card


@pytest.fixture(scope="session")
def pmma():
    return default_pmma_card()


@pytest.fixture(scope="session")
def elastic():
    """E = 2 GPa, nu = 0.3, alpha = 7e-5 /K."""
    return elastic_card(2.0e9, 0.3, 7.0e-5)


@pytest.fixture
def cube():
    return box_mesh(2, 2, 2, size=(1e-3, 1e-3, 1e-3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion: prints a PASS/FAIL line and asserts it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
