import time

import numpy as np
import pytest

from steinbandit import (build_gaussian_conjugate_model, build_logistic_model,
                         make_logistic_data)

_acceptance_clock: dict[str, float] = {}


def pytest_runtest_setup(item):
    if "test_acceptance" in item.nodeid:
        _acceptance_clock[item.nodeid] = time.monotonic()


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if "test_acceptance" not in report.nodeid or report.when != "call":
        return
    elapsed = time.monotonic() - _acceptance_clock.get(report.nodeid, 0.0)
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[ACCEPTANCE] {name}: {status} ({elapsed:.1f}s)", flush=True)


@pytest.fixture(scope="session")
def gauss_model():
    """Small conjugate Gaussian target with known posterior moments."""
    return build_gaussian_conjugate_model(100, 2, obs_noise=1.0,
                                          prior_var=10.0, data_seed=1)


@pytest.fixture(scope="session")
def gauss_model_1d():
    return build_gaussian_conjugate_model(100, 1, obs_noise=1.0,
                                          prior_var=10.0, data_seed=5)


@pytest.fixture(scope="session")
def logistic_model_small():
    X, y = make_logistic_data(200, 3, seed=11)
    return build_logistic_model(X, y)


def finite_difference_gradient(f, x, eps=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = eps * (1.0 + abs(x[i]))
        up, down = x.copy(), x.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (f(up) - f(down)) / (2.0 * step)
    return grad
