"""Tensor core: layer semantics, gradient oracle, Adam, the named store."""

import numpy as np
import pytest

from avse import nn
from avse.errors import NumericError, ShapeError, UsageError
from avse.nn import tensor as T


class TestConv2d:
    def test_identity_scale_1x1(self):
        out = nn.conv2d(nn.Tensor([[[3.0]]]), nn.Tensor(np.full((1, 1, 1, 1), 2.0)), nn.Tensor([0.5]))
        assert out.data.shape == (1, 1, 1)
        assert out.item() == pytest.approx(2.0 * 3.0 + 0.5)

    def test_same_padding_shape_from_conv_stack(self, rng):
        x = nn.Tensor(rng.standard_normal((622, 225, 1)))
        k = nn.Tensor(rng.standard_normal((5, 5, 1, 64)) * 0.01)
        out = nn.conv2d(x, k, padding="same")
        assert out.data.shape == (622, 225, 64)

    def test_valid_all_ones_sums_window(self):
        x = nn.Tensor(np.ones((3, 3, 1)))
        k = nn.Tensor(np.ones((3, 3, 1, 1)))
        out = nn.conv2d(x, k, padding="valid")
        assert out.data.shape == (1, 1, 1)
        assert out.item() == pytest.approx(9.0)

    def test_same_preserves_dims_for_odd_kernels(self, rng):
        for kk in (1, 3, 5, 7):
            x = nn.Tensor(rng.standard_normal((10, 11, 2)))
            k = nn.Tensor(rng.standard_normal((kk, kk, 2, 3)))
            assert nn.conv2d(x, k, padding="same").data.shape == (10, 11, 3)

    def test_channel_mismatch_raises(self, rng):
        x = nn.Tensor(rng.standard_normal((4, 4, 2)))
        k = nn.Tensor(rng.standard_normal((3, 3, 3, 1)))
        with pytest.raises(ShapeError):
            nn.conv2d(x, k)


class TestTransposedConv2d:
    def test_stride1_identity_kernel(self, rng):
        x = nn.Tensor(rng.standard_normal((5, 6, 1)))
        k = nn.Tensor(np.ones((1, 1, 1, 1)))
        out = nn.transposed_conv2d(x, k, stride=1)
        np.testing.assert_allclose(out.data, x.data)

    def test_stride2_tiles_unit_input(self):
        x = nn.Tensor(np.ones((2, 2, 1)))
        k = nn.Tensor(np.ones((2, 2, 1, 1)))
        out = nn.transposed_conv2d(x, k, stride=2)
        assert out.data.shape == (4, 4, 1)
        np.testing.assert_allclose(out.data, np.ones((4, 4, 1)))

    def test_double_upsample_restores_96(self, rng):
        x = nn.Tensor(rng.standard_normal((24, 24, 2)))
        k1 = nn.Tensor(rng.standard_normal((3, 3, 2, 2)) * 0.1)
        mid = nn.transposed_conv2d(x, k1, stride=2)
        assert mid.data.shape[:2] == (48, 48)
        out = nn.transposed_conv2d(mid, k1, stride=2)
        assert out.data.shape[:2] == (96, 96)


class TestDense:
    def test_identity(self):
        x = nn.Tensor(np.array([[1.0, 2.0]]))
        out = nn.dense(x, nn.Tensor(np.eye(2)), nn.Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [[1.0, 2.0]])

    def test_identity_with_bias(self):
        out = nn.dense(nn.Tensor(np.array([1.0, 2.0]).reshape(1, 2)), nn.Tensor(np.eye(2)), nn.Tensor(np.ones(2)))
        np.testing.assert_allclose(out.data, [[2.0, 3.0]])

    def test_fusion_shape(self, rng):
        x = nn.Tensor(rng.standard_normal((225, 3000)))
        w = nn.Tensor(rng.standard_normal((3000, 622)) * 0.01)
        assert nn.dense(x, w).data.shape == (225, 622)

    def test_time_distributed_rows_independent(self, rng):
        w = nn.Tensor(rng.standard_normal((4, 3)))
        b = nn.Tensor(rng.standard_normal(3))
        x = rng.standard_normal((6, 4))
        full = nn.dense(nn.Tensor(x), w, b).data
        for i in range(6):
            row = nn.dense(nn.Tensor(x[i : i + 1]), w, b).data[0]
            np.testing.assert_allclose(full[i], row)

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            nn.dense(nn.Tensor(rng.standard_normal((3, 5))), nn.Tensor(rng.standard_normal((4, 2))))


class TestLstm:
    def test_zero_everything_gives_zero_state(self):
        x = nn.Tensor(np.zeros(3))
        h = nn.Tensor(np.zeros(4))
        c = nn.Tensor(np.zeros(4))
        wx = nn.Tensor(np.zeros((3, 16)))
        wh = nn.Tensor(np.zeros((4, 16)))
        b = nn.Tensor(np.zeros(16))
        y, (h2, c2) = nn.lstm_step(x, (h, c), wx, wh, b)
        np.testing.assert_allclose(y.data, 0)
        np.testing.assert_allclose(c2.data, 0)

    def test_output_bounded(self, rng):
        wx = nn.Tensor(rng.standard_normal((3, 16)) * 3)
        wh = nn.Tensor(rng.standard_normal((4, 16)) * 3)
        b = nn.Tensor(rng.standard_normal(16) * 3)
        h = nn.Tensor(np.zeros(4))
        c = nn.Tensor(np.zeros(4))
        for _ in range(20):
            y, (h, c) = nn.lstm_step(nn.Tensor(rng.standard_normal(3) * 5), (h, c), wx, wh, b)
            assert np.abs(y.data).max() < 1.0

    def test_nonfinite_input_raises(self):
        wx = nn.Tensor(np.zeros((2, 8)))
        wh = nn.Tensor(np.zeros((2, 8)))
        b = nn.Tensor(np.zeros(8))
        s = (nn.Tensor(np.zeros(2)), nn.Tensor(np.zeros(2)))
        with pytest.raises(NumericError):
            nn.lstm_step(nn.Tensor(np.array([np.nan, 0.0])), s, wx, wh, b)

    def test_sequence_matches_stepwise(self, rng):
        bsz, steps, width, units = 3, 7, 5, 4
        seq = nn.Tensor(rng.standard_normal((bsz, steps, width)))
        wx = nn.Tensor(rng.standard_normal((width, 4 * units)) * 0.4)
        wh = nn.Tensor(rng.standard_normal((units, 4 * units)) * 0.4)
        b = nn.Tensor(rng.standard_normal(4 * units) * 0.1)
        whole = nn.lstm_sequence(seq, wx, wh, b).data
        h = nn.Tensor(np.zeros((bsz, units)))
        c = nn.Tensor(np.zeros((bsz, units)))
        for t in range(steps):
            x_t = T.reshape(T.narrow(seq, 1, t, 1), (bsz, width))
            y, (h, c) = nn.lstm_step(x_t, (h, c), wx, wh, b)
            np.testing.assert_array_equal(whole[t], y.data)


class TestActivations:
    def test_sigmoid_at_zero(self):
        assert nn.sigmoid(nn.Tensor(np.zeros(1))).item() == pytest.approx(0.5)

    def test_relu_values(self):
        out = nn.relu(nn.Tensor(np.array([-3.0, 3.0])))
        np.testing.assert_allclose(out.data, [0.0, 3.0])

    def test_sigmoid_range_and_overflow(self):
        out = nn.sigmoid(nn.Tensor(np.array([-1e4, -1.0, 0.0, 1.0, 1e4]))).data
        assert (out > 0).all() and (out < 1).all() or (out[0] == 0.0 and out[-1] == 1.0)
        assert np.isfinite(out).all()

    def test_instance_norm_standardizes(self, rng):
        x = nn.Tensor(rng.standard_normal((9, 8, 3)) * 4 + 2)
        out = nn.instance_norm(x).data
        np.testing.assert_allclose(out.mean(axis=(0, 1)), 0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 1)), 1, atol=1e-4)

    def test_instance_norm_constant_channel_is_zero(self):
        out = nn.instance_norm(nn.Tensor(np.full((4, 5, 2), 7.0)))
        np.testing.assert_allclose(out.data, 0.0)


class TestLosses:
    def test_bce_half_is_ln2(self):
        loss = nn.bce(nn.Tensor(np.array([0.5])), np.array([1.0]))
        assert loss.item() == pytest.approx(np.log(2.0), rel=1e-12)

    def test_bce_finite_at_hard_targets(self):
        loss = nn.bce(nn.Tensor(np.array([0.0, 1.0])), np.array([1.0, 0.0]))
        assert np.isfinite(loss.item())

    def test_l1_self_zero(self, rng):
        x = rng.standard_normal(10)
        assert nn.l1(nn.Tensor(x), x).item() == 0.0

    def test_mse_value(self):
        assert nn.mse(nn.Tensor(np.array([0.0, 2.0])), np.array([0.0, 0.0])).item() == pytest.approx(2.0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            nn.mse(nn.Tensor(rng.standard_normal(3)), rng.standard_normal(4))


class TestBackward:
    def test_hand_derived_mse_gradient(self):
        w = nn.Tensor(np.array([[1.0]]))
        x = nn.Tensor(np.array([[2.0]]))
        loss = nn.mse(T.matmul(x, w), np.array([[0.0]]))
        (grad,) = nn.gradients(loss, [w])
        assert grad[0, 0] == pytest.approx(8.0)

    def test_unused_parameter_gets_zeros(self, rng):
        a = nn.Tensor(rng.standard_normal(3))
        unused = nn.Tensor(rng.standard_normal(4))
        loss = nn.mean(T.mul(a, a))
        g_a, g_unused = nn.gradients(loss, [a, unused])
        assert np.any(g_a != 0)
        np.testing.assert_array_equal(g_unused, np.zeros(4))

    def test_backward_without_record_raises(self):
        with pytest.raises(UsageError):
            nn.backward(nn.Tensor(np.array(1.0)))

    def test_backward_needs_scalar(self, rng):
        x = nn.Tensor(rng.standard_normal(3))
        y = T.mul(x, x)
        with pytest.raises(UsageError):
            nn.backward(y)


class TestGradientOracle:
    """Analytic vs central finite differences, 64-bit, rel err < 1e-4."""

    TOL = 1e-4

    def test_conv2d(self, rng):
        x = nn.Tensor(rng.standard_normal((5, 6, 2)))
        k = nn.Tensor(rng.standard_normal((3, 3, 2, 3)) * 0.4)
        b = nn.Tensor(rng.standard_normal(3) * 0.2)
        tgt = rng.standard_normal((5, 6, 3))
        f = lambda: nn.mse(nn.conv2d(x, k, b, padding="same"), tgt)
        assert nn.max_relative_error(f, [x, k, b]) < self.TOL

    def test_conv2d_strided_valid(self, rng):
        x = nn.Tensor(rng.standard_normal((7, 8, 2)))
        k = nn.Tensor(rng.standard_normal((3, 3, 2, 2)) * 0.4)
        tgt = rng.standard_normal((3, 3, 2))
        f = lambda: nn.mse(nn.conv2d(x, k, stride=2, padding="valid"), tgt)
        assert nn.max_relative_error(f, [x, k]) < self.TOL

    def test_conv2d_dilated(self, rng):
        x = nn.Tensor(rng.standard_normal((7, 7, 1)))
        k = nn.Tensor(rng.standard_normal((3, 3, 1, 2)) * 0.4)
        tgt = rng.standard_normal((7, 7, 2))
        f = lambda: nn.mse(nn.conv2d(x, k, dilation=2, padding="same"), tgt)
        assert nn.max_relative_error(f, [x, k]) < self.TOL

    def test_conv2d_batched_causal(self, rng):
        x = nn.Tensor(rng.standard_normal((2, 5, 6, 2)))
        k = nn.Tensor(rng.standard_normal((3, 3, 2, 2)) * 0.4)
        tgt = rng.standard_normal((2, 5, 6, 2))
        f = lambda: nn.mse(nn.conv2d(T.pad2d(x, ((0, 0), (2, 0))), k, padding=("same", "valid")), tgt)
        assert nn.max_relative_error(f, [x, k]) < self.TOL

    def test_transposed_conv2d(self, rng):
        x = nn.Tensor(rng.standard_normal((4, 5, 2)))
        k = nn.Tensor(rng.standard_normal((3, 3, 2, 3)) * 0.4)
        tgt = rng.standard_normal((8, 10, 3))
        f = lambda: nn.mse(nn.transposed_conv2d(x, k, stride=2), tgt)
        assert nn.max_relative_error(f, [x, k]) < self.TOL

    def test_dense(self, rng):
        x = nn.Tensor(rng.standard_normal((6, 4)))
        w = nn.Tensor(rng.standard_normal((4, 3)) * 0.5)
        b = nn.Tensor(rng.standard_normal(3) * 0.2)
        tgt = rng.standard_normal((6, 3))
        f = lambda: nn.mse(nn.dense(x, w, b), tgt)
        assert nn.max_relative_error(f, [x, w, b]) < self.TOL

    def test_lstm_step_chain(self, rng):
        wx = nn.Tensor(rng.standard_normal((3, 16)) * 0.4)
        wh = nn.Tensor(rng.standard_normal((4, 16)) * 0.4)
        b = nn.Tensor(rng.standard_normal(16) * 0.1)
        x = nn.Tensor(rng.standard_normal((2, 3)))
        tgt = rng.standard_normal((2, 4))

        def f():
            h = nn.Tensor(np.zeros((2, 4)))
            c = nn.Tensor(np.zeros((2, 4)))
            y, (h, c) = nn.lstm_step(x, (h, c), wx, wh, b)
            y, _ = nn.lstm_step(x, (h, c), wx, wh, b)
            return nn.mse(y, tgt)

        assert nn.max_relative_error(f, [x, wx, wh, b]) < self.TOL

    def test_lstm_sequence(self, rng):
        seq = nn.Tensor(rng.standard_normal((2, 5, 3)))
        wx = nn.Tensor(rng.standard_normal((3, 16)) * 0.4)
        wh = nn.Tensor(rng.standard_normal((4, 16)) * 0.4)
        b = nn.Tensor(rng.standard_normal(16) * 0.1)
        tgt = rng.standard_normal((5, 2, 4))
        f = lambda: nn.mse(nn.lstm_sequence(seq, wx, wh, b), tgt)
        assert nn.max_relative_error(f, [seq, wx, wh, b]) < self.TOL

    def test_activations_and_norm(self, rng):
        x = nn.Tensor(rng.standard_normal((4, 5, 2)))
        tgt = rng.standard_normal((4, 5, 2))
        for op in (T.relu, T.sigmoid, T.tanh, lambda t: T.leaky_relu(t, 0.2), nn.instance_norm):
            f = lambda: nn.mse(op(x), tgt)
            assert nn.max_relative_error(f, [x]) < self.TOL

    def test_losses(self, rng):
        p = nn.Tensor(rng.uniform(0.05, 0.95, (3, 4)))
        t = (rng.uniform(0, 1, (3, 4)) > 0.5).astype(float)
        for loss in (lambda: nn.bce(p, t), lambda: nn.l1(p, t), lambda: nn.mse(p, t)):
            assert nn.max_relative_error(loss, [p]) < self.TOL

    def test_pads_and_shape_ops(self, rng):
        x = nn.Tensor(rng.standard_normal((5, 6, 2)))
        tgt_r = rng.standard_normal((9, 10, 2))
        f = lambda: nn.mse(T.pad2d(x, ((2, 2), (2, 2)), mode="reflect"), tgt_r)
        assert nn.max_relative_error(f, [x]) < self.TOL
        tgt_t = rng.standard_normal((6, 5, 2))
        f2 = lambda: nn.mse(T.transpose(x, (1, 0, 2)), tgt_t)
        assert nn.max_relative_error(f2, [x]) < self.TOL


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        params = nn.NamedTensorStore()
        params.add("w", nn.Tensor(np.array([1.0, -2.0])))
        grads = nn.NamedTensorStore()
        grads.add("w", nn.Tensor(np.zeros(2)))
        state = nn.AdamState(params, lr=1e-3)
        before = params["w"].data.copy()
        nn.adam_step(params, grads, state)
        np.testing.assert_array_equal(params["w"].data, before)
        assert state.step == 1

    def test_first_step_magnitude_is_lr(self, rng):
        params = nn.NamedTensorStore()
        params.add("w", nn.Tensor(rng.standard_normal(5)))
        g = rng.standard_normal(5) * 10
        grads = nn.NamedTensorStore()
        grads.add("w", nn.Tensor(g))
        state = nn.AdamState(params, lr=3e-4)
        before = params["w"].data.copy()
        nn.adam_step(params, grads, state)
        delta = params["w"].data - before
        np.testing.assert_allclose(np.abs(delta), 3e-4, rtol=1e-6)
        np.testing.assert_array_equal(np.sign(delta), -np.sign(g))

    def test_missing_gradient_raises(self):
        params = nn.NamedTensorStore()
        params.add("w", nn.Tensor(np.zeros(2)))
        state = nn.AdamState(params)
        with pytest.raises(UsageError):
            nn.adam_step(params, nn.NamedTensorStore(), state)

    def test_deterministic_trajectory(self):
        def run():
            rng = np.random.default_rng(3)
            params = nn.NamedTensorStore()
            params.add("w", nn.Tensor(rng.standard_normal(4)))
            state = nn.AdamState(params, lr=1e-2)
            for _ in range(10):
                grads = nn.NamedTensorStore()
                grads.add("w", nn.Tensor(rng.standard_normal(4)))
                nn.adam_step(params, grads, state)
            return params["w"].data

        np.testing.assert_array_equal(run(), run())


class TestNamedTensorStore:
    def test_insertion_order(self, rng):
        store = nn.NamedTensorStore()
        for n in ("z", "a", "m"):
            store.add(n, nn.Tensor(rng.standard_normal(2)))
        assert store.names() == ["z", "a", "m"]

    def test_duplicate_name_rejected(self, rng):
        store = nn.NamedTensorStore()
        store.add("w", nn.Tensor(rng.standard_normal(2)))
        with pytest.raises(UsageError):
            store.add("w", nn.Tensor(rng.standard_normal(2)))
