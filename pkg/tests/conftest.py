import pytest

from rbvsense.chaos import ChaosParams, Topology, fit_reservoir_coeffs
from rbvsense.lognnet import LogNNetModel
from rbvsense.synthetic import PRESETS, generate_synthetic


def random_lognnet(rng, topology=None, weight=0.5):
    """Random float LogNNet whose reservoir coefficients come from uniform [0, 1) inputs."""
    t = topology or Topology()
    chaos = ChaosParams()
    coeffs = fit_reservoir_coeffs(rng.random((50, t.S)), chaos, t)
    w1 = rng.uniform(-weight, weight, (t.P + 1, t.M + 1))
    w2 = rng.uniform(-weight, weight, (t.M + 1, t.N + 1))
    return LogNNetModel(t, chaos, coeffs, w1, w2)


@pytest.fixture(scope="session")
def separable():
    return generate_synthetic(PRESETS["separable"], 100, seed=1)


@pytest.fixture(scope="session")
def cruciform():
    return generate_synthetic(PRESETS["cruciform"], 200, seed=2)


@pytest.fixture(scope="session")
def blood():
    return generate_synthetic(PRESETS["blood"], 200, seed=3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
