"""Tensor-core tests: convolution vs the nested-loop oracle, batch norm,
activations, losses, Adadelta vs an independent reference, initializers
and the finite-difference gradient checker."""

import numpy as np
import pytest

from anonet import nn
from oracles import adadelta_reference, direct_conv2d


def rand(shape, seed, scale=1.0):
    return (np.random.default_rng(seed).standard_normal(shape) * scale).astype(np.float32)


class TestConvForward:
    def test_identity_kernel(self):
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        p = nn.ConvParams(w, [0.0])
        x = rand((1, 1, 5, 5), seed=0)
        np.testing.assert_allclose(nn.conv2d_forward(x, p), x, rtol=1e-6)

    def test_all_ones_3x3(self):
        p = nn.ConvParams(np.ones((1, 1, 3, 3)), [0.0])
        out = nn.conv2d_forward(np.ones((1, 1, 3, 3), dtype=np.float32), p)
        expected = [[4, 6, 4], [6, 9, 6], [4, 6, 4]]
        np.testing.assert_allclose(out[0, 0], expected, rtol=1e-6)

    def test_matches_direct_oracle(self):
        x = rand((2, 3, 8, 8), seed=1)
        w = rand((4, 3, 7, 7), seed=2)
        b = rand((4,), seed=3)
        p = nn.ConvParams(w, b)
        out = nn.conv2d_forward(x, p)
        ref = direct_conv2d(x, w, b)
        assert np.max(np.abs(out - ref)) <= 1e-6 * np.max(np.abs(ref))

    @pytest.mark.parametrize("stride,h,w", [(1, 9, 7), (2, 8, 8), (2, 9, 7), (3, 10, 5)])
    def test_strided_output_shape(self, stride, h, w):
        p = nn.ConvParams(rand((2, 1, 3, 3), seed=4), np.zeros(2), stride=stride)
        out = nn.conv2d_forward(rand((1, 1, h, w), seed=5), p)
        assert out.shape == (1, 2, -(-h // stride), -(-w // stride))

    def test_channel_mismatch_raises(self):
        p = nn.ConvParams(rand((2, 3, 3, 3), seed=6), np.zeros(2))
        with pytest.raises(nn.ShapeError):
            nn.conv2d_forward(rand((1, 2, 5, 5), seed=7), p)

    def test_even_kernel_rejected(self):
        with pytest.raises(nn.ShapeError):
            nn.ConvParams(np.ones((1, 1, 4, 4)), [0.0])

    @pytest.mark.parametrize("k", [1, 3, 5, 7, 11])
    def test_stride1_preserves_dims(self, k):
        rng = np.random.default_rng(k)
        h, w = rng.integers(1, 20, size=2)
        p = nn.ConvParams(rand((1, 1, k, k), seed=k), [0.0])
        assert nn.conv2d_forward(rand((1, 1, h, w), seed=k + 1), p).shape == (1, 1, h, w)


class TestConvBackward:
    def test_zero_grad_out(self):
        x = rand((1, 2, 4, 4), seed=0)
        p = nn.ConvParams(rand((3, 2, 3, 3), seed=1), np.zeros(3))
        gx, gw, gb = nn.conv2d_backward(x, p, np.zeros((1, 3, 4, 4), dtype=np.float32))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_scalar_case(self):
        x = np.full((1, 1, 1, 1), 3.0, dtype=np.float32)
        p = nn.ConvParams(np.full((1, 1, 1, 1), 2.0), [0.0])
        g = np.full((1, 1, 1, 1), 5.0, dtype=np.float32)
        gx, gw, gb = nn.conv2d_backward(x, p, g)
        assert gw[0, 0, 0, 0] == pytest.approx(15.0)
        assert gx[0, 0, 0, 0] == pytest.approx(10.0)
        assert gb[0] == pytest.approx(5.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
        w = (rng.standard_normal((2, 2, 3, 3)) * 0.5).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        tgt = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)

        # finite differences run through the float64 oracle so that float32
        # rounding in the fast path does not swamp the 1e-4 probe
        def loss_of_w(wv):
            diff = direct_conv2d(x, wv, b) - tgt
            return float(np.mean(diff ** 2))

        def loss_of_x(xv):
            diff = direct_conv2d(xv, w, b) - tgt
            return float(np.mean(diff ** 2))

        p = nn.ConvParams(w, b)
        out = nn.conv2d_forward(x, p)
        _, grad_out = nn.mse_loss(out, tgt)
        gx, gw, gb = nn.conv2d_backward(x, p, grad_out)
        assert nn.grad_check(loss_of_w, w.astype(np.float64), gw) < 1e-3
        assert nn.grad_check(loss_of_x, x.astype(np.float64), gx) < 1e-3

    def test_shape_mismatch(self):
        x = rand((1, 1, 4, 4), seed=0)
        p = nn.ConvParams(rand((1, 1, 3, 3), seed=1), [0.0])
        with pytest.raises(nn.ShapeError):
            nn.conv2d_backward(x, p, np.zeros((1, 1, 5, 5), dtype=np.float32))


class TestBatchNorm:
    def test_constant_input_zeroed(self):
        p = nn.BatchNormParams(2)
        out = nn.batchnorm_forward(np.full((2, 2, 3, 3), 7.0, dtype=np.float32), p)
        np.testing.assert_allclose(out, 0.0, atol=1e-4)

    def test_four_point_normalization(self):
        p = nn.BatchNormParams(1, epsilon=1e-12)
        x = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 1, 2, 2)
        out = nn.batchnorm_forward(x, p)
        expected = [-1.3416, -0.4472, 0.4472, 1.3416]
        np.testing.assert_allclose(out.reshape(-1), expected, atol=1e-4)

    @pytest.mark.parametrize("seed", range(5))
    def test_output_standardized(self, seed):
        p = nn.BatchNormParams(3)
        x = rand((4, 3, 6, 6), seed=seed)
        out = nn.batchnorm_forward(x, p).astype(np.float64)
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        assert np.all(np.abs(mean) < 1e-5)
        assert np.all(np.abs(var - 1.0) < 1e-4)

    def test_eval_before_train_raises(self):
        p = nn.BatchNormParams(1)
        p.mode = "eval"
        with pytest.raises(RuntimeError):
            nn.batchnorm_forward(rand((1, 1, 2, 2), seed=0), p)

    def test_running_stats_used_in_eval(self):
        p = nn.BatchNormParams(1)
        x = rand((4, 1, 5, 5), seed=1)
        nn.batchnorm_forward(x, p)
        p.mode = "eval"
        single = rand((1, 1, 5, 5), seed=2)
        out = nn.batchnorm_forward(single, p)
        inv = 1.0 / np.sqrt(p.running_var + p.epsilon)
        np.testing.assert_allclose(
            out[0, 0], (single[0, 0] - p.running_mean) * inv, rtol=1e-5)

    def test_backward_zero_grad(self):
        p = nn.BatchNormParams(2)
        x = rand((2, 2, 3, 3), seed=0)
        gx, gg, gb = nn.batchnorm_backward(x, p, np.zeros_like(x))
        assert not gx.any() and not gg.any() and not gb.any()

    def test_single_element_channel(self):
        # one pixel per channel: the statistics absorb the input entirely
        p = nn.BatchNormParams(1, epsilon=1e-3)
        x = rand((1, 1, 1, 1), seed=3)
        gx, _, _ = nn.batchnorm_backward(x, p, np.ones_like(x))
        assert abs(gx[0, 0, 0, 0]) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        p = nn.BatchNormParams(3, epsilon=1e-3)
        p.gamma = rng.standard_normal(3).astype(np.float32)
        p.beta = rng.standard_normal(3).astype(np.float32)
        tgt = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)

        def loss_of(xv):
            # float64 re-statement of train-mode normalization for the probe
            mean = xv.mean(axis=(0, 2, 3), keepdims=True)
            var = xv.var(axis=(0, 2, 3), keepdims=True)
            g64 = p.gamma.astype(np.float64).reshape(1, 3, 1, 1)
            b64 = p.beta.astype(np.float64).reshape(1, 3, 1, 1)
            out = g64 * (xv - mean) / np.sqrt(var + 1e-3) + b64
            return float(np.mean((out - tgt) ** 2))

        q = nn.BatchNormParams(3, epsilon=1e-3)
        q.gamma, q.beta = p.gamma, p.beta
        out = nn.batchnorm_forward(x, q)
        _, grad_out = nn.mse_loss(out, tgt)
        gx, gg, gb = nn.batchnorm_backward(x, q, grad_out)
        assert nn.grad_check(loss_of, x.astype(np.float64), gx) < 1e-3


class TestActivations:
    def test_relu_values(self):
        x = np.array([-2.0, 3.0], dtype=np.float32)
        np.testing.assert_array_equal(nn.relu(x), [0.0, 3.0])

    def test_tanh_zero(self):
        assert nn.tanh_act(np.zeros(1))[0] == 0.0
        out = nn.tanh_act(rand((2, 1, 3, 3), seed=0, scale=10))
        assert np.all(np.abs(out) <= 1.0)

    def test_relu_backward_gating(self):
        x = np.array([-1.0, 2.0], dtype=np.float32)
        g = np.array([5.0, 7.0], dtype=np.float32)
        np.testing.assert_array_equal(nn.relu_backward(x, g), [0.0, 7.0])

    def test_tanh_backward(self):
        x = np.array([0.3], dtype=np.float32)
        y = nn.tanh_act(x)
        g = nn.tanh_backward(y, np.ones(1, dtype=np.float32))
        assert g[0] == pytest.approx(1.0 - np.tanh(0.3) ** 2, rel=1e-5)


class TestLosses:
    def test_mse_zero_at_match(self):
        x = rand((1, 1, 3, 3), seed=0)
        loss, grad = nn.mse_loss(x, x)
        assert loss == 0.0 and not grad.any()

    def test_mse_example(self):
        loss, _ = nn.mse_loss(np.array([0.0, 0.0]), np.array([1.0, -1.0]))
        assert loss == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_mse_grad_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.standard_normal((2, 1, 3, 3))
        tgt = rng.standard_normal((2, 1, 3, 3))
        _, grad = nn.mse_loss(pred, tgt)
        err = nn.grad_check(lambda p: nn.mse_loss(p, tgt)[0], pred, grad)
        assert err < 1e-6

    def test_mse_shape_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.mse_loss(np.zeros(3), np.zeros(4))

    def test_ce_zero_at_match(self):
        y = np.array([0.0, 1.0, 1.0, 0.0])
        loss, _ = nn.cross_entropy_loss(y, y)
        assert loss == pytest.approx(0.0, abs=1e-5)

    def test_ce_half(self):
        loss, _ = nn.cross_entropy_loss(np.array([0.5]), np.array([1.0]))
        assert loss == pytest.approx(0.6931, abs=1e-4)

    def test_ce_rejects_nonbinary_target(self):
        with pytest.raises(ValueError):
            nn.cross_entropy_loss(np.array([0.5]), np.array([0.3]))

    @pytest.mark.parametrize("seed", range(5))
    def test_ce_grad_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0.05, 0.95, size=(10,))
        tgt = (rng.random(10) > 0.5).astype(np.float64)
        _, grad = nn.cross_entropy_loss(pred, tgt)
        err = nn.grad_check(lambda p: nn.cross_entropy_loss(p, tgt)[0], pred, grad,
                            epsilon=1e-6)
        assert err < 1e-5


class TestAdadelta:
    def test_zero_grad_no_move(self):
        x = rand((3, 3), seed=0).astype(np.float64)
        before = x.copy()
        nn.adadelta_step([x], [np.zeros_like(x)], nn.AdadeltaState())
        np.testing.assert_array_equal(x, before)

    def test_first_step_magnitude(self):
        x = np.zeros(1)
        nn.adadelta_step([x], [np.ones(1)], nn.AdadeltaState())
        # sqrt(1e-6) / sqrt(0.05 + 1e-6)
        assert x[0] == pytest.approx(-4.4721e-3, rel=1e-3)

    def test_matches_reference_on_quadratic(self):
        x = np.array([1.0])
        state = nn.AdadeltaState()
        for _ in range(10):
            nn.adadelta_step([x], [2.0 * x], state)
        ref = adadelta_reference(np.array([1.0]), lambda v: 2.0 * v, steps=10)
        np.testing.assert_allclose(x, ref, atol=1e-10)

    def test_accumulators_nonnegative_and_finite(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(20)
        state = nn.AdadeltaState()
        for i in range(50):
            nn.adadelta_step([x], [rng.standard_normal(20) * 10 ** (i % 4)], state)
        assert np.all(np.isfinite(x))
        assert np.all(state.acc_grad[0] >= 0)
        assert np.all(state.acc_delta[0] >= 0)

    def test_frozen_slot_skipped(self):
        x = np.ones(2)
        nn.adadelta_step([None, x], [np.ones(2), np.zeros(2)], nn.AdadeltaState())
        np.testing.assert_array_equal(x, np.ones(2))


class TestInit:
    def test_deterministic(self):
        a = nn.he_init((4, 4), 8, np.random.default_rng(42))
        b = nn.he_init((4, 4), 8, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_variance(self):
        w = nn.he_init((100000,), 50, np.random.default_rng(0))
        assert w.var() == pytest.approx(0.04, rel=0.05)
        assert abs(w.mean()) < 3 * 0.2 / np.sqrt(100000)

    def test_bad_fan_in(self):
        with pytest.raises(ValueError):
            nn.he_init((2, 2), 0, np.random.default_rng(0))


class TestGradCheck:
    def test_linear_exact(self):
        a = np.array([2.0, -3.0, 0.5])
        err = nn.grad_check(lambda x: float(a @ x), np.ones(3), a)
        assert err < 1e-10

    def test_detects_wrong_gradient(self):
        a = np.array([2.0, -3.0, 0.5])
        err = nn.grad_check(lambda x: float(a @ x), np.ones(3), 2 * a)
        assert err > 0.1
