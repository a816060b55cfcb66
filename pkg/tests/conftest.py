import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def central_differences(f, x, h=1e-5):
    """Numerical gradient of scalar f at array x by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        up = f(x)
        x.flat[i] = orig - h
        down = f(x)
        x.flat[i] = orig
        g.flat[i] = (up - down) / (2 * h)
    return g


def max_rel_error(analytic, numeric):
    """max |a - n| normalised by the largest numeric entry."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
