import numpy as np
import pytest

from multifused.model import Coefficients, PanelData


def random_panel(rng, n=8, p=3, T=4, K=3, missing=0.2):
    """Small panel with random labels and random missingness (every t keeps one cell)."""
    Y = rng.integers(1, K + 1, size=(n, T))
    drop = rng.random((n, T)) < missing
    drop[0] = False
    Y[drop] = 0
    X = rng.normal(size=(n, p, T))
    X[np.broadcast_to(drop[:, None, :], X.shape)] = np.nan
    return PanelData(Y, X, K)


def random_coefficients(rng, p, T, K, scale=1.0):
    return Coefficients(scale * rng.normal(size=(T, K - 1)),
                        scale * rng.normal(size=(p, T, K - 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
