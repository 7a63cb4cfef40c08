"""Tensor-core operations against independent brute-force oracles."""

import mpmath
import numpy as np
import pytest

from sparsetrace import tensor as T
from sparsetrace.tensor import Tape, Tensor, backward

from conftest import central_differences


def conv_oracle(x, w, stride=1):
    """Six nested loops, valid padding, canonical accumulation order."""
    n, h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    out = np.zeros((n, ho, wo, co))
    for b in range(n):
        for y in range(ho):
            for xx in range(wo):
                for o in range(co):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            for c in range(ci):
                                acc += x[b, y * stride + i, xx * stride + j, c] * w[i, j, c, o]
                    out[b, y, xx, o] = acc
    return out


def dense_oracle(x, w, b):
    n, d = x.shape
    m = w.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc + b[j]
    return out


def maxpool_oracle(x, window, stride):
    n, h, w, c = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((n, ho, wo, c))
    for b in range(n):
        for y in range(ho):
            for xx in range(wo):
                for ch in range(c):
                    out[b, y, xx, ch] = x[b, y * stride : y * stride + window,
                                          xx * stride : xx * stride + window, ch].max()
    return out


class TestConv2d:
    def test_scalar_kernel_scales_input(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
        w = Tensor(np.array(2.0).reshape(1, 1, 1, 1))
        out = T.conv2d(x, w)
        assert np.array_equal(out.data.reshape(2, 2), [[2, 4], [6, 8]])

    def test_unit_kernel_is_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 4, 4, 1)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        assert np.array_equal(T.conv2d(x, w).data, x.data)

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(1, 5, 5, 1))
        w = rng.normal(size=(3, 3, 1, 1))
        assert np.array_equal(T.conv2d(Tensor(x), Tensor(w)).data, conv_oracle(x, w))

    @pytest.mark.parametrize("stride,ci,co", [(1, 3, 4), (2, 2, 5)])
    def test_oracle_multichannel(self, stride, ci, co):
        rng = np.random.default_rng(stride * 10 + ci)
        x = rng.normal(size=(2, 7, 7, ci))
        w = rng.normal(size=(3, 3, ci, co))
        assert np.array_equal(T.conv2d(Tensor(x), Tensor(w), stride=stride).data,
                              conv_oracle(x, w, stride))

    def test_channel_mismatch_diagnostic(self):
        with pytest.raises(T.ShapeError, match=r"\[1, 4, 4, 2\].*\[3, 3, 3, 1\]"):
            T.conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))


class TestDense:
    def test_identity(self):
        out = T.dense(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
        assert np.array_equal(out.data, [[1.0, 0.0]])

    def test_hand_evaluation(self):
        out = T.dense(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([3.0]))
        assert np.array_equal(out.data, [[6.0]])

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(7)
        x, w, b = rng.normal(size=(4, 8)), rng.normal(size=(8, 3)), rng.normal(size=3)
        assert np.array_equal(T.dense(Tensor(x), Tensor(w), Tensor(b)).data,
                              dense_oracle(x, w, b))

    def test_mismatch_diagnostic(self):
        with pytest.raises(T.ShapeError, match="dense dimension mismatch"):
            T.dense(Tensor(np.zeros((1, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))


class TestRelu:
    def test_definition(self):
        assert np.array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_all_negative_gives_full_sparsity(self):
        out = T.relu(Tensor(-np.abs(np.random.default_rng(1).normal(size=(3, 3))) - 0.1))
        assert np.all(out.data == 0.0)

    def test_output_sparsity_counts_nonpositive(self):
        x = np.random.default_rng(2).normal(size=100)
        out = T.relu(Tensor(x))
        assert np.count_nonzero(out.data == 0.0) == np.count_nonzero(x <= 0.0)


class TestMaxpool:
    def test_single_window(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
        assert T.maxpool2d(x, 2, 2).data.item() == 4.0

    def test_constant_input(self):
        out = T.maxpool2d(Tensor(np.full((1, 4, 4, 2), 3.5)), 2, 2)
        assert np.all(out.data == 3.5)

    def test_matches_loop_oracle_exactly(self):
        x = np.random.default_rng(3).normal(size=(2, 6, 6, 3))
        assert np.array_equal(T.maxpool2d(Tensor(x), 2, 2).data, maxpool_oracle(x, 2, 2))
        assert np.array_equal(T.maxpool2d(Tensor(x), 3, 1).data, maxpool_oracle(x, 3, 1))

    def test_oversized_window_diagnostic(self):
        with pytest.raises(T.ShapeError, match="maxpool window"):
            T.maxpool2d(Tensor(np.zeros((1, 2, 2, 1))), 3, 1)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = T.softmax_cross_entropy(Tensor([[0.0, 0.0]]), np.array([0]))
        assert loss.data == pytest.approx(np.log(2.0), rel=1e-15)

    def test_saturated_logits_no_overflow(self):
        loss = T.softmax_cross_entropy(Tensor([[1000.0, 0.0]]), np.array([0]))
        assert 0.0 <= float(loss.data) < 1e-300 or float(loss.data) == 0.0

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(scale=5.0, size=(6, 4))
        labels = rng.integers(0, 4, 6)
        with mpmath.workdps(60):
            total = mpmath.mpf(0)
            for row, lab in zip(logits, labels):
                denom = mpmath.fsum(mpmath.e**mpmath.mpf(v) for v in row)
                total += -mpmath.log(mpmath.e**mpmath.mpf(row[lab]) / denom)
            expect = float(total / len(labels))
        got = float(T.softmax_cross_entropy(Tensor(logits), labels).data)
        assert got == pytest.approx(expect, rel=1e-12)

    def test_out_of_range_label_diagnostic(self):
        with pytest.raises(ValueError, match="labels must lie"):
            T.softmax_cross_entropy(Tensor(np.zeros((1, 3))), np.array([3]))


class TestBackward:
    def test_square_derivative(self):
        w = Tensor(np.array(3.0), name="w")
        tape = Tape()
        tape.watch(w)
        sq = Tensor(w.data**2)
        tape.record("square", (w,), sq, lambda g: (2.0 * w.data * g,), lambda: w.data**2)
        grads = backward(tape, sq)
        assert grads["w"].data == 6.0

    def test_unused_parameter_gets_zero_gradient(self):
        w = Tensor(np.ones(3), name="w")
        p = Tensor(np.ones(2), name="unused")
        tape = Tape()
        tape.watch(w)
        tape.watch(p)
        s = T.scale(w, 2.0, tape)
        loss = T.softmax_cross_entropy(T.reshape(s, (1, 3), tape), np.array([0]), tape)
        grads = backward(tape, loss)
        assert np.all(grads["unused"].data == 0.0)
        assert grads["w"].data.shape == (3,)

    def test_nonscalar_loss_diagnostic(self):
        tape = Tape()
        with pytest.raises(T.ShapeError, match="loss must be scalar"):
            backward(tape, Tensor(np.zeros(2)))

    def test_linearity(self):
        rng = np.random.default_rng(5)
        w = Tensor(rng.normal(size=(3, 2)), name="w")

        def grad_of(a, b, lab1, lab2):
            tape = Tape()
            tape.watch(w)
            x = Tensor(rng2.normal(size=(1, 3)))
            l1 = T.softmax_cross_entropy(T.dense(x, w, bias, tape), np.array([lab1]), tape)
            l2 = T.softmax_cross_entropy(T.dense(x, w, bias, tape), np.array([lab2]), tape)
            loss = T.add(T.scale(l1, a, tape), T.scale(l2, b, tape), tape)
            return backward(tape, loss)["w"].data, l1, l2

        bias = Tensor(np.zeros(2), name="b")
        rng2 = np.random.default_rng(6)
        g_combined, _, _ = grad_of(2.0, 3.0, 0, 1)
        rng2 = np.random.default_rng(6)
        g1, _, _ = grad_of(1.0, 0.0, 0, 1)
        rng2 = np.random.default_rng(6)
        g2, _, _ = grad_of(0.0, 1.0, 0, 1)
        assert np.allclose(g_combined, 2.0 * g1 + 3.0 * g2, rtol=1e-12, atol=1e-15)

    def test_finite_differences_all_layer_kinds(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 6, 6, 2))
        labels = np.array([0, 1])
        kw = Tensor(rng.normal(size=(3, 3, 2, 3)), name="conv/kernel")
        gamma = Tensor(rng.normal(size=3) + 1.0, name="bn/gamma")
        beta = Tensor(rng.normal(size=3), name="bn/beta")
        dw = Tensor(rng.normal(size=(12, 2)), name="fc/weights")
        db = Tensor(rng.normal(size=2), name="fc/bias")

        def run(tape=None):
            h = T.conv2d(Tensor(x), kw, stride=1, padding="valid", tape=tape)
            h = T.batchnorm(h, gamma, beta, np.zeros(3), np.ones(3), "train", tape=tape)
            h = T.relu(h, tape)
            h = T.add(h, h, tape)
            h = T.maxpool2d(h, 2, 2, tape)
            h = T.reshape(h, (2, -1), tape)
            h = T.dense(h, dw, db, tape)
            return T.softmax_cross_entropy(h, labels, tape)

        tape = Tape()
        for p in (kw, gamma, beta, dw, db):
            tape.watch(p)
        grads = backward(tape, run(tape))
        fd = central_differences(lambda: float(run().data),
                                 [kw.data, gamma.data, beta.data, dw.data, db.data],
                                 step=1e-5)
        for p, g_fd in zip((kw, gamma, beta, dw, db), fd):
            an = grads[p.name].data
            denom = np.maximum(np.maximum(np.abs(an), np.abs(g_fd)), 1e-6)
            assert np.max(np.abs(an - g_fd) / denom) < 1e-4, p.name


class TestTape:
    def test_replay_reproduces_outputs(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(1, 5, 5, 1)))
        w = Tensor(rng.normal(size=(3, 3, 1, 2)), name="w")
        tape = Tape()
        h = T.conv2d(x, w, tape=tape)
        h = T.relu(h, tape)
        T.maxpool2d(h, 3, 1, tape)
        assert tape.replay()

    def test_topological_order(self):
        tape = Tape()
        x = Tensor(np.ones((1, 4)))
        w = Tensor(np.eye(4), name="w")
        h = T.dense(x, w, Tensor(np.zeros(4)), tape)
        T.relu(h, tape)
        produced = set()
        for e in tape.entries:
            for inp in e.inputs:
                assert id(inp) in produced or inp not in [e2.output for e2 in tape.entries]
            produced.add(id(e.output))
