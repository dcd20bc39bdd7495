import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_fd_gradient(f, x, h):
    """Generic central-difference gradient oracle."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        xp = x.copy(); xp[j] += h
        xm = x.copy(); xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def central_fd_jacobian(f, x, h):
    """Generic central-difference Jacobian oracle, columns = input directions."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        xp = x.copy(); xp[j] += h
        xm = x.copy(); xm[j] -= h
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h))
    return np.stack(cols, axis=-1)
