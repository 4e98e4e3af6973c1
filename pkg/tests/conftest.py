import numpy as np
import pytest

from echodl.kspace import EchoStack


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_stack(rng, n=2, h=16, w=16):
    return EchoStack(rng.standard_normal((n, h, w)) + 1j * rng.standard_normal((n, h, w)))


def cinner(a, b):
    """Complex inner product <a, b> = sum(conj(a) * b)."""
    return np.vdot(np.ravel(a), np.ravel(b))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
