"""Finite-difference oracles shared by the test suite.

These stay independent of the analytic derivative code they check.
"""

import numpy as np


def central_jacobian(func, x, step=1e-5):
    """Central-difference Jacobian of a vector function at a single point."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x), dtype=float)
    jac = np.empty(f0.shape + (x.size,))
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        jac[..., i] = (np.asarray(func(x + e)) - np.asarray(func(x - e))) / (2.0 * step)
    return jac


def central_gradient(func, x, step=1e-5):
    """Central-difference gradient of a scalar function at a single point."""
    x = np.asarray(x, dtype=float)
    grad = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        grad[i] = (func(x + e) - func(x - e)) / (2.0 * step)
    return grad.reshape(x.shape)


def assert_close(analytic, reference, rtol=1e-5, atol=1e-8, label=""):
    analytic = np.asarray(analytic)
    reference = np.asarray(reference)
    if not np.allclose(analytic, reference, rtol=rtol, atol=atol):
        gap = np.max(np.abs(analytic - reference))
        raise AssertionError(f"{label or 'values'} disagree: max abs gap {gap:.3e}")
