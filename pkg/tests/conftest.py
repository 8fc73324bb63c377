import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crgate import data_path, load_device

settings.register_profile(
    "default", deadline=None, max_examples=40, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def gate_pair():
    return load_device(data_path("gate_pair.yaml"))


@pytest.fixture(scope="session")
def device4():
    return load_device(data_path("device_4q.yaml"))


@pytest.fixture(scope="session")
def two_qubit_only():
    return load_device(data_path("two_qubit_only.yaml"))


@pytest.fixture(scope="session")
def gate_calibration(gate_pair):
    from crgate.sequences import calibrate_echo_gate

    return calibrate_echo_gate(gate_pair, "Q2", "Q3")


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
