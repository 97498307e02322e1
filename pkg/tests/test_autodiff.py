"""Tensor-engine tests: oracle comparisons, contracts, and invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relpose import autodiff as ad
from relpose.autodiff import (DimensionError, NumericsError, Parameter, Tensor,
                              UsageError, adam_step)


def conv2d_loop_oracle(x, w, b=None, stride=1, padding=1):
    """Direct 6-nested-loop cross-correlation in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    bn, cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((bn, cin, h + 2 * padding, ww + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + ww] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((bn, cout, oh, ow))
    for n in range(bn):
        for o in range(cout):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for c in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, c, y * stride + i, xx * stride + j] * w[o, c, i, j]
                    out[n, o, y, xx] = acc + (b[o] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_scalar_product(self):
        out = ad.conv2d(Tensor([[[[2.0]]]]), Tensor([[[[3.0]]]]))
        assert out.data.reshape(-1)[0] == pytest.approx(6.0)

    def test_identity_kernel_over_channels(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (2, 3, 4, 4)).astype(np.float32)
        eye = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
        out = ad.conv2d(Tensor(x), Tensor(eye))
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, (1, 2, 4, 4))
        w = rng.uniform(-1, 1, (3, 2, 3, 3))
        out = ad.conv2d(Tensor(x), Tensor(w), padding=1)
        np.testing.assert_allclose(out.data, conv2d_loop_oracle(x, w, padding=1), atol=1e-5)

    @pytest.mark.parametrize("shape", [(1, 1, 4, 4), (2, 2, 8, 8), (2, 4, 8, 6)])
    @pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (1, 1, 3), (2, 1, 2), (2, 0, 2)])
    def test_oracle_grid(self, shape, stride, padding, k):
        rng = np.random.default_rng(hash((shape, stride, padding, k)) % 2**32)
        h, w = shape[2:]
        if (h + 2 * padding - k) % stride or (w + 2 * padding - k) % stride:
            pytest.skip("geometry does not tile")
        x = rng.uniform(-1, 1, shape)
        wt = rng.uniform(-1, 1, (3, shape[1], k, k))
        b = rng.uniform(-1, 1, 3)
        out = ad.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, padding=padding)
        np.testing.assert_allclose(
            out.data, conv2d_loop_oracle(x, wt, b, stride=stride, padding=padding), atol=1e-5)

    def test_channel_mismatch_raises(self):
        with pytest.raises(DimensionError):
            ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_non_integer_output_extent_raises(self):
        with pytest.raises(DimensionError):
            ad.conv2d(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((1, 1, 2, 2))), stride=2)


class TestMaxpool2:
    def test_single_window(self):
        out = ad.maxpool2(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)))
        assert out.data.reshape(-1)[0] == pytest.approx(4.0)

    def test_constant_map(self):
        out = ad.maxpool2(Tensor(np.full((1, 2, 4, 4), 0.7)))
        np.testing.assert_allclose(out.data, np.full((1, 2, 2, 2), 0.7), atol=0)

    def test_matches_windowed_max_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (1, 1, 8, 8))
        out = ad.maxpool2(Tensor(x))
        expect = np.zeros((1, 1, 4, 4))
        for y in range(4):
            for xx in range(4):
                expect[0, 0, y, xx] = x[0, 0, 2 * y:2 * y + 2, 2 * xx:2 * xx + 2].max()
        np.testing.assert_array_equal(out.data, expect.astype(np.float32))

    def test_odd_extent_raises(self):
        with pytest.raises(DimensionError):
            ad.maxpool2(Tensor(np.zeros((1, 1, 3, 4))))

    def test_tie_gradient_goes_to_first_in_row_major(self):
        x = Tensor(np.full((1, 1, 2, 2), 0.5), requires_grad=True)
        loss = ad.mse(ad.maxpool2(x), Tensor(np.zeros((1, 1, 1, 1))))
        loss.backward()
        np.testing.assert_allclose(x.grad.reshape(-1), [1.0, 0, 0, 0])


class TestSoftmaxRows:
    def test_symmetry(self):
        out = ad.softmax_rows(Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-7)

    @pytest.mark.parametrize("x", [-50.0, 0.0, 3.7])
    def test_single_element(self, x):
        out = ad.softmax_rows(Tensor([x]))
        np.testing.assert_allclose(out.data, [1.0], atol=1e-7)

    def test_matches_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        expect = np.exp(x.astype(np.float64))
        expect /= expect.sum()
        out = ad.softmax_rows(Tensor(x))
        np.testing.assert_allclose(out.data, expect, atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=8),
           st.floats(-10, 10))
    def test_rows_sum_to_one_and_shift_invariant(self, row, shift):
        x = np.array(row, dtype=np.float32)
        out = ad.softmax_rows(Tensor(x)).data
        assert abs(out.sum() - 1.0) < 1e-6
        shifted = ad.softmax_rows(Tensor(x + np.float32(shift))).data
        np.testing.assert_allclose(out, shifted, atol=1e-6)


class TestBatchNorm2d:
    def test_eval_identity_stats(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, (2, 3, 4, 4)).astype(np.float32)
        out = ad.batchnorm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                             running_mean=np.zeros(3, np.float32),
                             running_var=np.ones(3, np.float32), training=False)
        np.testing.assert_allclose(out.data, x, atol=1e-5)

    def test_train_mode_normalizes(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-3, 5, (4, 2, 5, 5))
        out = ad.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
        assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-5
        assert np.abs(out.var(axis=(0, 2, 3)) - 1.0).max() < 1e-2  # eps shrinkage

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-2, 2, (3, 4, 6, 6))
        gamma = rng.uniform(0.5, 1.5, 4)
        beta = rng.uniform(-0.5, 0.5, 4)
        out = ad.batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta)).data
        x64 = x.astype(np.float64)
        mean = x64.mean(axis=(0, 2, 3))
        var = ((x64 - mean[:, None, None]) ** 2).mean(axis=(0, 2, 3))
        expect = gamma[:, None, None] * (x64 - mean[:, None, None]) / \
            np.sqrt(var[:, None, None] + 1e-5) + beta[:, None, None]
        np.testing.assert_allclose(out, expect, atol=1e-5)

    def test_running_stats_update(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, (4, 2, 3, 3))
        rm = np.zeros(2, np.float32)
        rv = np.ones(2, np.float32)
        ad.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       running_mean=rm, running_var=rv, training=True)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-6)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-6)

    def test_zero_batch_raises(self):
        with pytest.raises(DimensionError):
            ad.batchnorm2d(Tensor(np.zeros((0, 2, 3, 3))), Tensor(np.ones(2)),
                           Tensor(np.zeros(2)))


class TestPlumbingOps:
    def test_matmul_identity(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(-1, 1, (4, 4)).astype(np.float32)
        out = ad.matmul(Tensor(np.eye(4)), Tensor(a))
        np.testing.assert_allclose(out.data, a, atol=1e-6)

    def test_mse_self_is_zero(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert float(ad.mse(x, x).data) == 0.0

    def test_mse_hand_value(self):
        assert float(ad.mse(Tensor([1.0, 2.0]), Tensor([0.0, 0.0])).data) == pytest.approx(2.5)

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_concat_channels_roundtrip(self):
        a = np.ones((1, 2, 3, 3), np.float32)
        b = np.full((1, 1, 3, 3), 2.0, np.float32)
        out = ad.concat_channels([Tensor(a), Tensor(b)])
        assert out.shape == (1, 3, 3, 3)
        np.testing.assert_array_equal(out.data[:, :2], a)
        np.testing.assert_array_equal(out.data[:, 2:], b)

    def test_transpose_last2_and_reshape(self):
        x = np.arange(24.0).reshape(2, 3, 4)
        out = ad.transpose_last2(Tensor(x))
        np.testing.assert_array_equal(out.data, x.swapaxes(-1, -2))
        back = ad.reshape(Tensor(x), (6, 4))
        np.testing.assert_array_equal(back.data, x.reshape(6, 4))

    def test_depthwise_xcorr_delta_template(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-1, 1, (2, 3, 5, 5)).astype(np.float32)
        delta = np.zeros((2, 3, 3, 3), np.float32)
        delta[:, :, 1, 1] = 1.0
        out = ad.depthwise_xcorr(Tensor(x), Tensor(delta))
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_depthwise_xcorr_zero_template(self):
        out = ad.depthwise_xcorr(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 2, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((1, 2, 4, 4), np.float32))

    def test_depthwise_xcorr_sliding_oracle(self):
        rng = np.random.default_rng(9)
        target = rng.uniform(-1, 1, (1, 2, 4, 4))
        template = rng.uniform(-1, 1, (1, 2, 2, 2))
        out = ad.depthwise_xcorr(Tensor(target), Tensor(template)).data
        pt, pl = 0, 0  # (2-1)//2
        xp = np.zeros((1, 2, 5, 5))
        xp[:, :, pt:pt + 4, pl:pl + 4] = target
        expect = np.zeros((1, 2, 4, 4))
        for c in range(2):
            for y in range(4):
                for x in range(4):
                    expect[0, c, y, x] = (xp[0, c, y:y + 2, x:x + 2] * template[0, c]).sum()
        np.testing.assert_allclose(out, expect, atol=1e-5)

    def test_depthwise_xcorr_template_too_large(self):
        with pytest.raises(DimensionError):
            ad.depthwise_xcorr(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


class TestBackward:
    def test_linear_map_gradient(self):
        x = np.array([1.0, -2.0, 3.0], dtype=np.float32)
        w = Tensor(np.array([0.5, 0.5, 0.5]), requires_grad=True)
        prod = ad.matmul(ad.reshape(w, (1, 3)), ad.reshape(Tensor(x), (3, 1)))
        loss = ad.reshape(prod, ())
        loss.backward()
        np.testing.assert_allclose(w.grad, x, atol=1e-6)

    def test_backward_twice_raises(self):
        w = Tensor(np.ones(3), requires_grad=True)
        loss = ad.mse(w, Tensor(np.zeros(3)))
        loss.backward()
        with pytest.raises(UsageError):
            loss.backward()

    def test_non_scalar_loss_raises(self):
        w = Tensor(np.ones(3), requires_grad=True)
        out = ad.relu(w)
        with pytest.raises(UsageError):
            out.backward()

    def test_gradients_accumulate_across_uses(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.add(ad.mul_scalar(w, 3.0), ad.mul_scalar(w, 4.0))
        loss = ad.reshape(y, ())
        loss.backward()
        np.testing.assert_allclose(w.grad, [7.0], atol=1e-6)


class TestNoInputMutation:
    def test_ops_leave_inputs_untouched(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(-1, 1, (2, 4, 4, 4)).astype(np.float32)
        w = rng.uniform(-1, 1, (3, 4, 3, 3)).astype(np.float32)
        tx, tw = Tensor(x.copy()), Tensor(w.copy())
        ad.conv2d(tx, tw, padding=1)
        ad.maxpool2(tx)
        ad.relu(tx)
        ad.softmax_rows(tx)
        ad.batchnorm2d(tx, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(tx.data, x)
        np.testing.assert_array_equal(tw.data, w)


class TestFiniteChecks:
    def test_non_finite_forward_raises(self):
        x = Tensor(np.array([1.0, np.inf]))
        with pytest.raises(NumericsError):
            ad.mul_scalar(x, 2.0)

    def test_checks_can_be_disabled(self):
        prev = ad.set_finite_checks(False)
        try:
            out = ad.mul_scalar(Tensor(np.array([np.nan])), 1.0)
            assert np.isnan(out.data).any()
        finally:
            ad.set_finite_checks(prev)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Parameter(np.array([1.0, -2.0]), "p")
        p.tensor.grad = np.zeros(2, np.float32)
        adam_step([p], lr=0.1)
        np.testing.assert_array_equal(p.tensor.data, np.array([1.0, -2.0], np.float32))

    def test_first_step_is_lr_times_sign(self):
        p = Parameter(np.array([1.0, 1.0, 1.0]), "p")
        p.tensor.grad = np.array([0.5, -2.0, 3.0], np.float32)
        adam_step([p], lr=0.01)
        np.testing.assert_allclose(p.tensor.data, [0.99, 1.01, 0.99], atol=1e-5)

    def test_three_steps_match_float64_oracle(self):
        # minimize f(w) = 0.5 w^2 on a scalar; oracle runs the same updates in float64
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        w64, m, v = 1.5, 0.0, 0.0
        trace = []
        for t in range(1, 4):
            g = w64
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w64 -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
            trace.append(w64)

        p = Parameter(np.array([1.5]), "w")
        for t in range(3):
            x = p.tensor
            loss = ad.mul_scalar(ad.mse(x, Tensor(np.zeros(1))), 0.5)
            loss.backward()
            adam_step([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
            assert p.tensor.data[0] == pytest.approx(trace[t], abs=1e-6)

    def test_missing_gradient_raises(self):
        p = Parameter(np.array([1.0]), "p")
        with pytest.raises(UsageError):
            adam_step([p], lr=0.1)
