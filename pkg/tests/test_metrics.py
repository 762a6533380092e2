import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radiolam.metrics import mae, mse, psnr


def test_identity_and_offset():
    t = np.random.default_rng(0).random((32, 32))
    assert mae(t, t) == 0 and mse(t, t) == 0 and psnr(t, t) == math.inf
    assert mae(t, t + 0.1) == pytest.approx(0.1, abs=1e-12)
    assert mse(t, t + 0.1) == pytest.approx(0.01, abs=1e-12)


def test_brute_force_resummation():
    rng = np.random.default_rng(1)
    t, e = rng.random((16, 16)), rng.random((16, 16))
    n = t.size
    abs_sum = sq_sum = 0.0
    for i in range(16):
        for j in range(16):
            abs_sum += abs(t[i][j] - e[i][j])
            sq_sum += (t[i][j] - e[i][j]) ** 2
    assert mae(t, e) == pytest.approx(abs_sum / n, abs=1e-12)
    assert mse(t, e) == pytest.approx(sq_sum / n, abs=1e-12)
    assert psnr(t, e) == pytest.approx(20 * math.log10(t.max() / math.sqrt(mse(t, e))), abs=1e-9)


def test_psnr_values():
    t = np.zeros((4, 4))
    t[0, 0] = 1.0
    assert psnr(t, t + 1.0) == pytest.approx(0.0, abs=1e-12)
    assert psnr(t, t + 0.1) == pytest.approx(20.0, abs=1e-12)
    assert psnr(t, t + 0.05) == pytest.approx(26.0206, abs=1e-4)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros((3, 3)), np.zeros((3, 4)))


@settings(max_examples=60)
@given(
    arrays(float, (6, 6), elements=st.floats(0, 1)),
    arrays(float, (6, 6), elements=st.floats(0, 1)),
)
def test_mae_below_rmse(t, e):
    assert mae(t, e) <= math.sqrt(mse(t, e)) + 1e-12


@settings(max_examples=40)
@given(st.floats(1e-6, 0.5), st.floats(1e-6, 0.5))
def test_psnr_decreasing_in_mse(a, b):
    t = np.ones((4, 4))
    lo, hi = sorted((a, b))
    if lo < hi:
        assert psnr(t, t - lo) > psnr(t, t - hi)
