import numpy as np
import pytest

from rkhs_mi.numkit import RngStream


@pytest.fixture
def rng():
    return RngStream(1234)


def central_diff(fn, x, h=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn()
        flat[i] = old - h
        down = fn()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-8):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
