import sys

import numpy as np
import pytest
from hypothesis import settings

from numbersqueeze.rates import OptomechParams

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def fig3_params(ratio=100.0, n_th=0.0):
    """Large-scale sweep parameters: omega_m = 1, lengths in x_zpf."""
    return OptomechParams.in_zpf_units(
        g0=707.0, kappa0=0.1, kappa_minus=0.01, kappa_v=0.001, d=14.0, L=7e4, gamma=ratio * 0.01, n_th=n_th
    )


def toy_params(gamma=0.1):
    """Desk-scale bipartite parameters (photon dim 16, phonon dim 14, frame shift 2.75)."""
    return OptomechParams.in_zpf_units(
        g0=0.275, kappa0=1e-3, kappa_minus=3e-5, kappa_v=0.0, d=10.0, L=11.1, gamma=gamma
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
