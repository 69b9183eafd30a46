import numpy as np
import pytest

from snaplab import models, noise
from snaplab.rng import Rng


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar f at float64 array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


class LinearModel:
    """Base-classifier stand-in f(x) = x W + b with fixed float64 weights."""

    def __init__(self, weight, bias=None):
        self.model = models.init("mlp", [weight.shape[0], weight.shape[1]], 0, dtype=np.float64)
        b = np.zeros(weight.shape[1]) if bias is None else bias
        self.model.set_weights([weight, b])


def linear_net(weight, bias=None, spec=None):
    m = LinearModel(np.asarray(weight, dtype=np.float64), bias).model
    return noise.to_snapnet(m, spec)


@pytest.fixture
def rng():
    return Rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
