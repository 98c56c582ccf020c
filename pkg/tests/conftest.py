"""Shared builders for random well-conditioned instances."""
import numpy as np
import pytest

from bayesda import Gaussian, LinearModel


def random_spd(rng, d, floor=0.5):
    A = rng.standard_normal((d, d))
    return A @ A.T / d + floor * np.eye(d)


def random_linear_model(rng, d, k):
    return LinearModel(
        M=rng.standard_normal((d, d)) / np.sqrt(d),
        H=rng.standard_normal((k, d)),
        Sigma=random_spd(rng, d),
        Gamma=random_spd(rng, k),
        init=Gaussian(rng.standard_normal(d), random_spd(rng, d)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# One line per acceptance criterion, filled by tests/test_acceptance.py.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
