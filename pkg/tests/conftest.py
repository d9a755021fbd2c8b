import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gensympl.forms import corpus
from gensympl.moser import DarbouxConfig, check_star, darboux_pipeline, derive_starstar

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected during the run, printed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def heaviside_form():
    return corpus("heaviside")


@pytest.fixture(scope="session")
def heaviside_cert(heaviside_form):
    cert = check_star(heaviside_form)
    return cert, derive_starstar(cert, heaviside_form, np.zeros(2))


@pytest.fixture(scope="session")
def heaviside_run(heaviside_form, heaviside_cert):
    """Full pipeline at eps = 0.05 with step 1e-3, quadrature order 16 and a 101-point grid."""
    cert, ss = heaviside_cert
    cfg = DarbouxConfig(step=1e-3, quad_order=16, verify_points=101, eps_indices=(3,))
    tic = time.perf_counter()
    res = darboux_pipeline(heaviside_form, np.zeros(2), cfg, cert, ss)
    return res, time.perf_counter() - tic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
