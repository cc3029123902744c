import numpy as np
import pytest
from scipy.integrate import quad

from nlimportance import activations as act


ACTIVATIONS = {
    "identity": act.identity,
    "logistic": act.logistic,
    "swish": lambda: act.swish_type(1.0, 2.0, 1.0),
}


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def ray_integral(gradient, theta):
    """Adaptive-quadrature oracle for the averaged gradient along ``t * theta``."""
    theta = np.asarray(theta, dtype=float)
    return np.array([
        quad(lambda t, k=k: gradient(t * theta)[k], 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        for k in range(theta.size)
    ])


_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store one acceptance line; the summary is printed at the end of the run."""

    def record(number, name, passed, detail):
        _ACCEPTANCE[number] = (name, bool(passed), detail)
        print(f"criterion {number} {name}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name}: {detail}")
