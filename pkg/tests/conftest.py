import numpy as np
import pytest


def superop_from_map(fn, d):
    """Assemble a superoperator column by column from its action on matrix units."""
    s = np.zeros((d * d, d * d), dtype=complex)
    for col in range(d):
        for row in range(d):
            unit = np.zeros((d, d), dtype=complex)
            unit[row, col] = 1.0
            s[:, row + d * col] = fn(unit).reshape(-1, order="F")
    return s


def random_matrix(rng, d):
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


def random_hermitian(rng, d):
    m = random_matrix(rng, d)
    return 0.5 * (m + m.conj().T)


def random_state(rng, d):
    m = random_matrix(rng, d)
    rho = m @ m.conj().T
    return rho / np.trace(rho)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
