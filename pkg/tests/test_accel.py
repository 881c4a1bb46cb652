import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kitchenplan import _accel
from oracles import conv3x3_reference


def _rand(seed, b=2, h=5, w=7, c=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(b, h, w, c)), rng.normal(size=(3, 3, c)), float(rng.normal())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 6), st.integers(1, 8), st.integers(1, 5))
def test_conv_numpy_matches_loop_reference(seed, b, h, w, c):
    x, k, bias = _rand(seed, b, h, w, c)
    np.testing.assert_allclose(_accel.conv3x3_forward_numpy(x, k, bias), conv3x3_reference(x, k, bias), atol=1e-12)


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_conv_backends_agree(seed):
    x, k, bias = _rand(seed)
    g = np.random.default_rng(seed + 1).normal(size=x.shape[:3])
    np.testing.assert_allclose(_accel._conv3x3_forward_numba(x, k, bias), _accel.conv3x3_forward_numpy(x, k, bias),
                               atol=1e-12)
    for a, b in zip(_accel._conv3x3_backward_numba(x, k, g), _accel.conv3x3_backward_numpy(x, k, g)):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_conv_backward_is_the_adjoint():
    x, k, bias = _rand(3)
    g = np.random.default_rng(4).normal(size=x.shape[:3])
    gx, gk, gb = _accel.conv3x3_backward(x, k, g)
    eps = 1e-6
    for idx in [(0, 0, 0, 0), (1, 2, 3, 1), (0, 4, 6, 3)]:
        xp = x.copy()
        xp[idx] += eps
        fd = ((_accel.conv3x3_forward(xp, k, bias) - _accel.conv3x3_forward(x, k, bias)) * g).sum() / eps
        assert abs(fd - gx[idx]) < 1e-4
    assert gb == pytest.approx(g.sum())
    assert gk.shape == k.shape


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_bfs_backends_agree(seed):
    rng = np.random.default_rng(seed)
    passable = rng.random((6, 8)) < 0.7
    src = np.argwhere(passable)[:1]
    if len(src) == 0:
        return
    ref = _accel.bfs_distances_numpy(passable, src)
    np.testing.assert_array_equal(_accel.bfs_distances(passable, src), ref)
    assert ref[tuple(src[0])] == 0
    assert (ref[~passable] == _accel.UNREACHED).all()


def test_backend_flag_selects_numpy():
    env = dict(os.environ, KITCHENPLAN_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", "from kitchenplan import _accel; print(_accel.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_backend_flag_rejects_unknown_values():
    env = dict(os.environ, KITCHENPLAN_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", "import kitchenplan._accel"], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "KITCHENPLAN_BACKEND" in out.stderr
