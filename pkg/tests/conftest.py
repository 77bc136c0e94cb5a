import numpy as np
import pytest

from catalytic.states import State
from catalytic.tensor import SystemLayout


def random_density(dim, rng, rank=None):
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    r = g @ g.conj().T
    return r / np.trace(r).real


def random_state(layout, rng, rank=None):
    if isinstance(layout, int):
        layout = SystemLayout.of(("S", layout))
    return State(random_density(layout.total_dim, rng, rank), layout)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, printed once at the end of the run
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
