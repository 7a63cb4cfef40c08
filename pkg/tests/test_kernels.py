"""Backend parity: the compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from sparsetrace import _pykernels as pk
from sparsetrace import kernels

ck = pytest.importorskip("sparsetrace._ckernels", reason="compiled backend unavailable")

RNG = np.random.default_rng(2024)


def _conv_inputs(n=2, h=9, w=7, ci=3, co=4, kh=3, kw=3):
    x = RNG.normal(size=(n, h, w, ci))
    wgt = RNG.normal(size=(kh, kw, ci, co))
    return x, wgt


class TestForwardParity:
    def test_conv2d_bitwise(self):
        x, w = _conv_inputs()
        a = pk.conv2d_forward(x, w, 1)
        b = ck.conv2d_forward(x, w, 1)
        assert np.array_equal(a, b)

    def test_conv2d_strided_bitwise(self):
        x, w = _conv_inputs(h=11, w=11)
        assert np.array_equal(pk.conv2d_forward(x, w, 2), ck.conv2d_forward(x, w, 2))

    def test_dense_bitwise(self):
        x = RNG.normal(size=(5, 17))
        w = RNG.normal(size=(17, 9))
        assert np.array_equal(pk.dense_forward(x, w), ck.dense_forward(x, w))

    def test_maxpool_bitwise(self):
        x = RNG.normal(size=(3, 8, 8, 5))
        out_a, idx_a = pk.maxpool_forward(x, 2, 2)
        out_b, idx_b = ck.maxpool_forward(x, 2, 2)
        assert np.array_equal(out_a, out_b)
        assert np.array_equal(idx_a, idx_b)

    def test_maxpool_tie_goes_to_first(self):
        x = np.zeros((1, 4, 4, 1))
        x[0, :, :, 0] = 3.0
        for mod in (pk, ck):
            _, idx = mod.maxpool_forward(x, 2, 2)
            # flat spatial index of the top-left element of each window
            assert idx[0, 0, 0, 0] == 0
            assert idx[0, 0, 1, 0] == 2
            assert idx[0, 1, 0, 0] == 8


class TestBackwardParity:
    def test_conv2d_backward_close(self):
        x, w = _conv_inputs()
        out = pk.conv2d_forward(x, w, 1)
        dout = RNG.normal(size=out.shape)
        dx_a = pk.conv2d_backward_input(dout, w, 1, x.shape[1], x.shape[2])
        dx_b = ck.conv2d_backward_input(dout, w, 1, x.shape[1], x.shape[2])
        assert np.allclose(dx_a, dx_b, rtol=1e-12, atol=1e-12)
        dw_a = pk.conv2d_backward_kernel(x, dout, w.shape[0], w.shape[1], 1)
        dw_b = ck.conv2d_backward_kernel(x, dout, w.shape[0], w.shape[1], 1)
        assert np.allclose(dw_a, dw_b, rtol=1e-12, atol=1e-12)

    def test_dense_backward_close(self):
        x = RNG.normal(size=(6, 13))
        w = RNG.normal(size=(13, 4))
        dout = RNG.normal(size=(6, 4))
        for a, b in zip(pk.dense_backward(x, w, dout), ck.dense_backward(x, w, dout)):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_maxpool_backward_bitwise(self):
        x = RNG.normal(size=(2, 6, 6, 3))
        out, idx = pk.maxpool_forward(x, 2, 2)
        dout = RNG.normal(size=out.shape)
        assert np.array_equal(pk.maxpool_backward(dout, idx, 6, 6),
                              ck.maxpool_backward(dout, idx, 6, 6))


class TestBackendSelection:
    def test_env_override(self):
        import importlib
        import os
        import subprocess
        import sys

        for forced, expect in (("python", "python"), ("compiled", "compiled")):
            code = ("import sparsetrace.kernels as k; print(k.BACKEND)")
            env = dict(os.environ, SPARSETRACE_BACKEND=forced)
            out = subprocess.run([sys.executable, "-c", code], env=env,
                                 capture_output=True, text=True, check=True)
            assert out.stdout.strip() == expect

    def test_default_prefers_compiled(self):
        assert kernels.BACKEND == "compiled"
