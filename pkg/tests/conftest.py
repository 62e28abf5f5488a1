import sys
from dataclasses import replace

import numpy as np
import pytest

from drmquant import BasisSpec, MultiSample
from drmquant.montecarlo import DESIGNS, run_experiment


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instance(rng, m=None, d=None):
    """Small random data set with a basis of matching size."""
    m = int(rng.integers(1, 4)) if m is None else m
    names = ["1", "x", "x2", "sqrt_abs"]
    d = int(rng.integers(2, 5)) if d is None else d
    spec = BasisSpec.from_names(names[:d])
    samples = [rng.normal(0.3 * k, 1.0 + 0.2 * k, size=int(rng.integers(5, 15)))
               for k in range(m + 1)]
    theta = rng.normal(scale=0.3, size=(m, d))
    return MultiSample(samples), spec, theta


def two_normals(rng, n, shift=1.0):
    return MultiSample([rng.normal(0, 1, n), rng.normal(shift, 1, n)])


# full-size simulation runs, shared by the acceptance and reproduction tests
@pytest.fixture(scope="session")
def gamma_table():
    return run_experiment(replace(DESIGNS["gamma50"], reps=2000, seed=2013))


@pytest.fixture(scope="session")
def misspec_table():
    return run_experiment(replace(DESIGNS["misspec50"], reps=2000, seed=2013))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
