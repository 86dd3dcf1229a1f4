import math

import numpy as np
import pytest

from gridcast.errors import DimensionError, ParameterError, StateError
from gridcast.layers import Attention, Conv1d, Dense, Dropout, Gru, LayerNorm, Relu
from gridcast.tensor import RngState

from oracles import check_gradients, max_rel_err, numeric_grad


def naive_conv1d(kernels, bias, x):
    """Sliding-window reference: explicit loops over time, channels, taps."""
    out_ch, in_ch, k = kernels.shape
    t_len = x.shape[0]
    pad = k // 2
    out = np.zeros((t_len, out_ch))
    for t in range(t_len):
        for o in range(out_ch):
            acc = bias[o]
            for i in range(in_ch):
                for j in range(k):
                    src = t + j - pad
                    if 0 <= src < t_len:
                        acc += kernels[o, i, j] * x[src, i]
            out[t, o] = acc
    return out


class TestConv1dForward:
    def test_identity_kernel(self):
        layer = Conv1d(np.array([[[1.0]]]), np.zeros(1))
        x = np.array([[1.0], [2.0], [3.0]])
        assert np.array_equal(layer.forward(x), x)

    def test_zero_kernel_bias_constant(self):
        layer = Conv1d(np.zeros((1, 1, 3)), np.array([4.5]))
        out = layer.forward(np.array([[1.0], [2.0], [3.0]]))
        assert np.array_equal(out, np.full((3, 1), 4.5))

    def test_box_kernel_hand_case(self):
        layer = Conv1d(np.ones((1, 1, 3)), np.zeros(1))
        out = layer.forward(np.array([[1.0], [2.0], [3.0]]))
        assert np.array_equal(out.ravel(), [3.0, 6.0, 5.0])

    def test_matches_naive_loop(self):
        rng = RngState(21)
        kernels = rng.uniform(-1, 1, (3, 2, 5))
        bias = rng.uniform(-1, 1, 3)
        x = rng.uniform(-2, 2, (7, 2))
        layer = Conv1d(kernels, bias)
        assert np.allclose(layer.forward(x), naive_conv1d(kernels, bias, x), atol=1e-12)

    @pytest.mark.parametrize("k", [1, 3, 5, 7])
    def test_time_length_preserved(self, k):
        rng = RngState(k)
        layer = Conv1d.init(2, 3, k, rng)
        for t_len in (1, 2, 5, 11):
            x = rng.uniform(-1, 1, (t_len, 2))
            assert layer.forward(x).shape == (t_len, 3)

    def test_channel_mismatch(self):
        layer = Conv1d.init(2, 3, 3, RngState(0))
        with pytest.raises(DimensionError):
            layer.forward(np.ones((4, 5)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ParameterError):
            Conv1d(np.ones((1, 1, 2)), np.zeros(1))


class TestGruForward:
    def test_zero_params_zero_state(self):
        layer = Gru(*[np.zeros((2, 3)) for _ in range(3)],
                    *[np.zeros((3, 3)) for _ in range(3)],
                    *[np.zeros(3) for _ in range(3)])
        out = layer.forward(np.ones((4, 2)))
        assert np.array_equal(out, np.zeros((4, 3)))

    def test_zero_params_halving_recursion(self):
        # with all weights zero: z = 0.5 and the candidate is 0, so the
        # state halves every step
        layer = Gru(*[np.zeros((2, 3)) for _ in range(3)],
                    *[np.zeros((3, 3)) for _ in range(3)],
                    *[np.zeros(3) for _ in range(3)])
        h0 = np.array([1.0, -2.0, 4.0])
        out = layer.forward(np.ones((3, 2)), h0)
        for t in range(3):
            assert np.allclose(out[t], h0 * 0.5 ** (t + 1), atol=1e-15)

    def test_scalar_hand_case(self):
        # in=hidden=1, only the candidate input weight is 1:
        # r=z=0.5, candidate tanh(1), h1 = 0.5*tanh(1)
        layer = Gru(W_r=[[0.0]], W_z=[[0.0]], W=[[1.0]],
                    U_r=[[0.0]], U_z=[[0.0]], U=[[0.0]],
                    b_r=[0.0], b_z=[0.0], b=[0.0])
        out = layer.forward(np.array([[1.0]]))
        expected = 0.5 * math.tanh(1.0)
        assert abs(out[0, 0] - expected) < 1e-12
        assert abs(expected - 0.380797) < 1e-6

    def test_bounded_by_max_of_h0_and_one(self):
        rng = RngState(17)
        for case in range(20):
            layer = Gru.init(3, 4, rng)
            h0 = rng.uniform(-3, 3, 4)
            x = rng.uniform(-5, 5, (6, 3))
            out = layer.forward(x, h0)
            bound = max(np.abs(h0).max(), 1.0) + 1e-12
            assert (np.abs(out) <= bound).all()

    def test_width_mismatch(self):
        layer = Gru.init(3, 4, RngState(0))
        with pytest.raises(DimensionError):
            layer.forward(np.ones((5, 2)))


class TestAttentionForward:
    def test_single_timestep_passthrough(self):
        layer = Attention.init(3, 2, RngState(1))
        x = np.array([[0.3, -1.2, 2.0]])
        assert np.allclose(layer.forward(x), x, atol=1e-15)

    def test_identical_rows_average_to_common_row(self):
        layer = Attention.init(3, 2, RngState(2))
        row = np.array([0.5, -0.25, 1.5])
        x = np.tile(row, (4, 1))
        out = layer.forward(x)
        assert np.allclose(out, x, atol=1e-12)

    def test_scalar_hand_case(self):
        # d = d_attn = 1, K_w = Q_w = [1], x = [[0], [ln 3]]:
        # row 2 scores are [0, (ln 3)^2], weights follow a two-way softmax
        layer = Attention(K_w=[[1.0]], Q_w=[[1.0]])
        ln3 = math.log(3.0)
        out = layer.forward(np.array([[0.0], [ln3]]))
        # row 1: scores [0, 0] -> weights [.5, .5]
        assert abs(out[0, 0] - 0.5 * ln3) < 1e-12
        w2 = math.exp(ln3 * ln3)
        alpha = np.array([1.0, w2]) / (1.0 + w2)
        assert abs(out[1, 0] - alpha[1] * ln3) < 1e-12

    def test_rows_sum_to_one(self):
        rng = RngState(5)
        layer = Attention.init(4, 3, rng)
        layer.forward(rng.uniform(-2, 2, (6, 4)))
        _, _, _, weights = layer._cache
        assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-12)

    def test_width_mismatch(self):
        layer = Attention.init(4, 3, RngState(0))
        with pytest.raises(DimensionError):
            layer.forward(np.ones((5, 3)))


class TestDenseForward:
    def test_identity(self):
        layer = Dense(np.eye(3), np.zeros(3))
        x = np.array([[1.0, -2.0, 0.5]])
        assert np.array_equal(layer.forward(x), x)

    def test_zero_weight_constant_bias(self):
        layer = Dense(np.zeros((3, 2)), np.array([5.0, -1.0]))
        out = layer.forward(np.ones((4, 3)))
        assert np.array_equal(out, np.tile([5.0, -1.0], (4, 1)))

    def test_relu_hand_case(self):
        layer = Dense(np.array([[1.0], [1.0]]), np.array([-1.0]), activation="relu")
        out = layer.forward(np.array([[0.2, 0.3]]))
        assert np.array_equal(out, [[0.0]])

    def test_width_mismatch(self):
        layer = Dense.init(3, 2, RngState(0))
        with pytest.raises(DimensionError):
            layer.forward(np.ones((1, 4)))


class TestDropout:
    def test_rate_zero_identity(self):
        x = RngState(0).uniform(-1, 1, (5, 4))
        out = Dropout(0.0).forward(x, training=True, rng=RngState(1))
        assert np.array_equal(out, x)

    def test_inference_identity(self):
        x = RngState(0).uniform(-1, 1, (5, 4))
        out = Dropout(0.9).forward(x, training=False)
        assert np.array_equal(out, x)

    def test_statistics_of_mask(self):
        x = np.ones((100, 100))
        out = Dropout(0.5).forward(x, training=True, rng=RngState(99))
        zero_frac = (out == 0).mean()
        assert abs(zero_frac - 0.5) < 0.02
        assert abs(out.mean() - 1.0) < 0.05

    def test_same_seed_bit_identical(self):
        x = RngState(2).uniform(-1, 1, (20, 7))
        a = Dropout(0.3).forward(x, training=True, rng=RngState(42))
        b = Dropout(0.3).forward(x, training=True, rng=RngState(42))
        assert np.array_equal(a, b)

    def test_bad_rate(self):
        with pytest.raises(ParameterError):
            Dropout(1.0)
        with pytest.raises(ParameterError):
            Dropout(-0.1)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        layer = LayerNorm.init(4)
        out = layer.forward(np.full((2, 4), 3.7))
        assert np.allclose(out, 0.0, atol=1e-9)

    def test_two_point_row_hand_case(self):
        layer = LayerNorm.init(2)
        out = layer.forward(np.array([[-1.0, 1.0]]))
        expected = 1.0 / math.sqrt(1.0 + 1e-5)
        assert np.allclose(out, [[-expected, expected]], atol=1e-15)

    def test_gain_zero_shift_constant(self):
        layer = LayerNorm(np.zeros(3), np.full(3, 2.5))
        out = layer.forward(RngState(1).uniform(-4, 4, (5, 3)))
        assert np.array_equal(out, np.full((5, 3), 2.5))


class TestBackwardContracts:
    def test_backward_without_forward_raises(self):
        for layer in (Conv1d.init(2, 2, 3, RngState(0)),
                      Gru.init(2, 2, RngState(0)),
                      Attention.init(2, 2, RngState(0)),
                      Dense.init(2, 2, RngState(0)),
                      LayerNorm.init(2),
                      Dropout(0.5),
                      Relu()):
            with pytest.raises(StateError):
                layer.backward(np.zeros((2, 2)))

    def test_second_backward_raises(self):
        layer = Dense.init(2, 2, RngState(0))
        layer.forward(np.ones((1, 2)))
        layer.backward(np.ones((1, 2)))
        with pytest.raises(StateError):
            layer.backward(np.ones((1, 2)))

    def test_dense_identity_passes_upstream_through(self):
        layer = Dense(np.eye(3), np.zeros(3))
        layer.forward(np.array([[0.1, 0.2, 0.3]]))
        upstream = np.array([[1.0, -2.0, 0.5]])
        assert np.array_equal(layer.backward(upstream), upstream)

    def test_zero_upstream_zero_gradients(self):
        rng = RngState(8)
        layer = Gru.init(3, 4, rng)
        x = rng.uniform(-1, 1, (5, 3))
        layer.forward(x)
        dx = layer.backward(np.zeros((5, 4)))
        assert np.array_equal(dx, np.zeros_like(x))
        for g in layer.grads.values():
            assert np.array_equal(g, np.zeros_like(g))


class TestGradientChecks:
    """Analytic vs central finite differences, the master property."""

    def test_conv1d(self):
        rng = RngState(100)
        for case in range(20):
            t_len = 1 + case % 5
            in_ch = 1 + case % 3
            out_ch = 1 + (case + 1) % 3
            k = (1, 3, 5)[case % 3]
            layer = Conv1d.init(in_ch, out_ch, k, rng)
            x = rng.uniform(-1, 1, (t_len, in_ch))
            arrays = {"x": x, **layer.params()}

            def backward_fn(up, layer=layer, x=x):
                dx = layer.backward(up)
                return {"x": dx, **layer.grads}

            check_gradients(lambda layer=layer, x=x: layer.forward(x),
                            backward_fn, arrays, seed=case)

    def test_gru_including_h0(self):
        rng = RngState(200)
        for case in range(20):
            t_len = 1 + case % 5
            in_dim = 1 + case % 3
            hidden = 1 + (case + 1) % 4
            layer = Gru.init(in_dim, hidden, rng)
            x = rng.uniform(-1, 1, (t_len, in_dim))
            h0 = rng.uniform(-1, 1, hidden)
            arrays = {"x": x, "h0": h0, **layer.params()}

            def backward_fn(up, layer=layer):
                dx = layer.backward(up)
                return {"x": dx, "h0": layer.h0_grad, **layer.grads}

            check_gradients(lambda layer=layer, x=x, h0=h0: layer.forward(x, h0),
                            backward_fn, arrays, seed=case)

    def test_attention(self):
        rng = RngState(300)
        for case in range(20):
            t_len = 1 + case % 5
            d = 1 + case % 4
            d_attn = 1 + (case + 2) % 3
            layer = Attention.init(d, d_attn, rng)
            x = rng.uniform(-1, 1, (t_len, d))
            arrays = {"x": x, **layer.params()}

            def backward_fn(up, layer=layer):
                dx = layer.backward(up)
                return {"x": dx, **layer.grads}

            check_gradients(lambda layer=layer, x=x: layer.forward(x),
                            backward_fn, arrays, seed=case)

    @pytest.mark.parametrize("activation", ["identity", "relu", "sigmoid"])
    def test_dense(self, activation):
        rng = RngState(400)
        for case in range(20):
            n = 1 + case % 4
            in_dim = 1 + case % 3
            out_dim = 1 + (case + 1) % 3
            layer = Dense.init(in_dim, out_dim, rng, activation=activation)
            # keep relu pre-activations away from the kink
            x = rng.uniform(0.1, 1.0, (n, in_dim))
            layer.bias += 0.05
            arrays = {"x": x, **layer.params()}

            def backward_fn(up, layer=layer):
                dx = layer.backward(up)
                return {"x": dx, **layer.grads}

            check_gradients(lambda layer=layer, x=x: layer.forward(x),
                            backward_fn, arrays, seed=case)

    def test_layernorm(self):
        rng = RngState(500)
        for case in range(20):
            n = 1 + case % 4
            d = 2 + case % 4
            layer = LayerNorm.init(d)
            layer.gain += rng.uniform(-0.3, 0.3, d)
            layer.shift += rng.uniform(-0.3, 0.3, d)
            x = rng.uniform(-1, 1, (n, d))
            arrays = {"x": x, **layer.params()}

            def backward_fn(up, layer=layer):
                dx = layer.backward(up)
                return {"x": dx, **layer.grads}

            check_gradients(lambda layer=layer, x=x: layer.forward(x),
                            backward_fn, arrays, seed=case)

    def test_dropout_with_replayed_mask(self):
        rng = RngState(600)
        for case in range(20):
            layer = Dropout(0.4)
            x = rng.uniform(0.5, 1.5, (3, 4))
            arrays = {"x": x}

            def forward_fn(layer=layer, x=x, case=case):
                return layer.forward(x, training=True, rng=RngState(1000 + case))

            def backward_fn(up, layer=layer):
                return {"x": layer.backward(up)}

            check_gradients(forward_fn, backward_fn, arrays, seed=case)

    def test_relu_layer(self):
        rng = RngState(700)
        for case in range(20):
            layer = Relu()
            x = rng.uniform(0.1, 1.0, (4, 3)) * np.sign(rng.uniform(-1, 1, (4, 3)))
            arrays = {"x": x}

            def backward_fn(up, layer=layer):
                return {"x": layer.backward(up)}

            check_gradients(lambda layer=layer, x=x: layer.forward(x),
                            backward_fn, arrays, seed=case)

    def test_fd_oracle_catches_wrong_gradient(self):
        # sanity-check the oracle itself: a corrupted gradient must fail
        layer = Dense.init(3, 2, RngState(1))
        x = RngState(2).uniform(0.2, 1.0, (2, 3))
        arrays = {"x": x, **layer.params()}

        def backward_fn(up, layer=layer):
            dx = layer.backward(up)
            grads = dict(layer.grads)
            grads["weight"] = grads["weight"] * 1.01
            return {"x": dx, **grads}

        with pytest.raises(AssertionError):
            check_gradients(lambda: layer.forward(x), backward_fn, arrays)
