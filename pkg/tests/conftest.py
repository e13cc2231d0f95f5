import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(f, tensors, h=1e-5):
    """Numerical gradient of scalar-valued f() w.r.t. each tensor's data."""
    grads = []
    for t in tensors:
        num = np.zeros_like(t.data)
        it = np.nditer(t.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = t.data[idx]
            t.data[idx] = orig + h
            lp = float(f().data)
            t.data[idx] = orig - h
            lm = float(f().data)
            t.data[idx] = orig
            num[idx] = (lp - lm) / (2 * h)
        grads.append(num)
    return grads


def assert_grads_close(analytic, numeric, rel=1e-4, abs_near_zero=1e-7):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.abs(numeric), abs_near_zero / rel)
    assert np.all(np.abs(analytic - numeric) / denom < rel), \
        f"max rel err {np.max(np.abs(analytic - numeric) / denom)}"
