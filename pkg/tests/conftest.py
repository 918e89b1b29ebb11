import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fourier_cbc.certify import SynthesisSettings, synthesize
from fourier_cbc.geometry import Ball, Box, Domain
from fourier_cbc.kernels import KernelParams, SampleSet
from fourier_cbc.lp import ProblemSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def contraction_problem(samples: int = 300, seed: int = 0):
    """Noise-free map ``x+ = x/2`` on [-1,1]^2 with a central initial ball."""
    r = np.random.default_rng(seed)
    states = r.uniform(-1.0, 1.0, (samples, 2))
    data = SampleSet(states, 0.5 * states)
    kin = KernelParams(1.0, [0.4, 0.4])
    kout = KernelParams(1.0, [0.6, 0.6])
    domain = Domain([-1.0, -1.0], [1.0, 1.0])
    problem = ProblemSpec(domain, Ball([0.0, 0.0], 0.2), Box([0.6, 0.6], [1.0, 1.0]), 5, 0.0, 5.0, 1.0)
    settings_ = SynthesisSettings(m_per_axis=3, oversample=8)
    return problem, settings_, data, kin, kout


@pytest.fixture(scope="session")
def contraction():
    problem, settings_, data, kin, kout = contraction_problem()
    cert = synthesize(problem, settings_, data, kin, kout, seed=0)
    return problem, settings_, data, kin, kout, cert
