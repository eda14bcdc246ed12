import json

import numpy as np
import pytest

from fairprice.mlp import (
    Mlp,
    Optimizer,
    apply_update,
    gradient_check,
    load_mlp,
    mlp_from_dict,
    mlp_to_dict,
    save_mlp,
)
from fairprice.numkit import Rng
from oracles import finite_difference_gradients


def squared_loss(out, y):
    diff = out - y
    return float(np.sum(diff * diff)), 2.0 * diff


def log_loss(out, y):
    p = np.clip(out, 1e-12, 1.0 - 1e-12)
    value = float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    grad = (p - y) / (p * (1.0 - p))
    return value, grad


def flat_params(net):
    return np.concatenate([w.ravel() for w in net.weights] + [b.ravel() for b in net.biases])


def set_params(net, flat):
    pos = 0
    for i, w in enumerate(net.weights):
        net.weights[i] = flat[pos : pos + w.size].reshape(w.shape)
        pos += w.size
    for i, b in enumerate(net.biases):
        net.biases[i] = flat[pos : pos + b.size].reshape(b.shape)
        pos += b.size


class TestForward:
    def test_zero_net_outputs_zero(self):
        net = Mlp([3, 4, 2])
        out, _ = net.forward(np.ones((5, 3)))
        assert np.array_equal(out, np.zeros((5, 2)))

    def test_single_linear_layer_is_affine_map(self):
        net = Mlp([3, 2]).init_xavier(Rng(0))
        x = Rng(1).normal(size=(10, 3))
        out, _ = net.forward(x)
        assert np.max(np.abs(out - (x @ net.weights[0] + net.biases[0]))) < 1e-12

    def test_sigmoid_range(self):
        net = Mlp([2, 8, 1], output_activation="sigmoid").init_xavier(Rng(2))
        out, _ = net.forward(Rng(3).normal(size=(50, 2)) * 10)
        assert np.all(out > 0) and np.all(out < 1)

    def test_deterministic(self):
        net = Mlp([2, 8, 1]).init_xavier(Rng(4))
        x = Rng(5).normal(size=(20, 2))
        assert np.array_equal(net.forward(x)[0], net.forward(x)[0])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dim"):
            Mlp([3, 1]).forward(np.ones((4, 2)))


class TestBackward:
    def test_identity_bias_gradient_is_column_sum(self):
        net = Mlp([3, 2]).init_xavier(Rng(6))
        x = Rng(7).normal(size=(9, 3))
        _, cache = net.forward(x)
        upstream = Rng(8).normal(size=(9, 2))
        grads = net.backward(cache, upstream)
        assert np.max(np.abs(grads.biases[0] - upstream.sum(axis=0))) < 1e-12

    def test_matches_finite_differences(self):
        net = Mlp([3, 8, 1], hidden_activation="tanh").init_xavier(Rng(9))
        x = Rng(10).normal(size=(20, 3))
        y = Rng(11).normal(size=(20, 1))
        base = flat_params(net)

        def objective(theta):
            set_params(net, theta)
            out, _ = net.forward(x)
            return squared_loss(out, y)[0]

        numeric = finite_difference_gradients(objective, base)
        set_params(net, base)
        out, cache = net.forward(x)
        _, upstream = squared_loss(out, y)
        grads = net.backward(cache, upstream)
        analytic = np.concatenate(
            [g.ravel() for g in grads.weights] + [g.ravel() for g in grads.biases]
        )
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        assert np.max(np.abs(analytic - numeric) / denom) < 1e-4

    def test_upstream_linearity(self):
        net = Mlp([2, 6, 2]).init_xavier(Rng(12))
        x = Rng(13).normal(size=(7, 2))
        _, cache = net.forward(x)
        upstream = Rng(14).normal(size=(7, 2))
        single = net.backward(cache, upstream)
        double = net.backward(cache, 2.0 * upstream)
        for g1, g2 in zip(single.weights, double.weights):
            assert np.array_equal(2.0 * g1, g2)
        assert np.array_equal(2.0 * single.input, double.input)

    def test_input_gradient_matches_finite_differences(self):
        net = Mlp([3, 6, 1]).init_xavier(Rng(15))
        x0 = Rng(16).normal(size=(4, 3))
        y = np.zeros((4, 1))

        def objective(flat_x):
            out, _ = net.forward(flat_x.reshape(4, 3))
            return squared_loss(out, y)[0]

        numeric = finite_difference_gradients(objective, x0.ravel().copy())
        out, cache = net.forward(x0)
        _, upstream = squared_loss(out, y)
        grads = net.backward(cache, upstream)
        denom = np.maximum(np.maximum(np.abs(grads.input.ravel()), np.abs(numeric)), 1e-8)
        assert np.max(np.abs(grads.input.ravel() - numeric) / denom) < 1e-4


class TestApplyUpdate:
    def _grads_of_ones(self, net):
        _, cache = net.forward(np.ones((3, net.input_dim)))
        return net.backward(cache, np.ones((3, net.output_dim)))

    def test_sgd_descent_rule(self):
        net = Mlp([2, 1]).init_xavier(Rng(17))
        grads = self._grads_of_ones(net)
        before = [w.copy() for w in net.weights]
        apply_update(net, grads, Optimizer("sgd", 0.1), "descent")
        assert np.allclose(net.weights[0], before[0] - 0.1 * grads.weights[0])

    def test_ascent_flips_sign(self):
        net = Mlp([2, 1]).init_xavier(Rng(18))
        grads = self._grads_of_ones(net)
        before = [w.copy() for w in net.weights]
        apply_update(net, grads, Optimizer("sgd", 0.1), "ascent")
        assert np.allclose(net.weights[0], before[0] + 0.1 * grads.weights[0])

    def test_adam_first_step_hand_oracle(self):
        net = Mlp([2, 1]).init_xavier(Rng(19))
        grads = self._grads_of_ones(net)
        before = [w.copy() for w in net.weights]
        lr = 0.05
        apply_update(net, grads, Optimizer("adam", lr), "descent")
        # first Adam step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        g = grads.weights[0]
        expected = before[0] - lr * g / (np.abs(g) + 1e-8)
        assert np.max(np.abs(net.weights[0] - expected)) < 1e-12

    def test_zero_gradient_is_noop(self):
        for kind in ("sgd", "adam"):
            net = Mlp([2, 3, 1]).init_xavier(Rng(20))
            before = [w.copy() for w in net.weights]
            zero = self._grads_of_ones(net)
            zero.weights = [np.zeros_like(w) for w in zero.weights]
            zero.biases = [np.zeros_like(b) for b in zero.biases]
            apply_update(net, zero, Optimizer(kind, 0.1), "descent")
            for w0, w1 in zip(before, net.weights):
                assert np.array_equal(w0, w1)

    def test_non_finite_gradient_reports_layer(self):
        net = Mlp([2, 3, 1]).init_xavier(Rng(21))
        grads = self._grads_of_ones(net)
        grads.weights[1][0, 0] = np.nan
        with pytest.raises(FloatingPointError, match="layer 1"):
            apply_update(net, grads, Optimizer("sgd", 0.1))

    def test_step_count_increments(self):
        net = Mlp([2, 1]).init_xavier(Rng(22))
        opt = Optimizer("adam", 0.01)
        for expected in (1, 2, 3):
            apply_update(net, self._grads_of_ones(net), opt)
            assert opt.step_count == expected


class TestGradientCheck:
    def test_linear_squared_loss(self):
        net = Mlp([3, 1]).init_xavier(Rng(23))
        x = Rng(24).normal(size=(15, 3))
        y = Rng(25).normal(size=(15, 1))
        assert gradient_check(net, squared_loss, x, y) < 1e-7

    def test_three_layer_tanh_log_loss(self):
        net = Mlp([3, 8, 8, 1], output_activation="sigmoid").init_xavier(Rng(26))
        x = Rng(27).normal(size=(20, 3))
        y = (Rng(28).uniform(size=(20, 1)) > 0.5).astype(float)
        assert gradient_check(net, log_loss, x, y) < 1e-4

    def test_relu_away_from_kinks(self):
        net = Mlp([3, 8, 1], hidden_activation="relu").init_xavier(Rng(29))
        x = Rng(30).normal(size=(60, 3))
        # keep pre-activations away from the kink so central differences are valid
        z = x @ net.weights[0] + net.biases[0]
        x = x[np.min(np.abs(z), axis=1) > 1e-3][:20]
        assert x.shape[0] >= 10
        y = Rng(31).normal(size=(x.shape[0], 1))
        assert gradient_check(net, squared_loss, x, y) < 1e-4

    def test_epsilon_domain(self):
        net = Mlp([2, 1]).init_xavier(Rng(32))
        with pytest.raises(ValueError):
            gradient_check(net, squared_loss, np.ones((3, 2)), np.ones((3, 1)), epsilon=1e-2)


class TestInitialization:
    def test_xavier_output_scale_envelope(self):
        net = Mlp([5, 32, 32, 1]).init_xavier(Rng(33))
        x = Rng(34).normal(size=(512, 5))
        out, _ = net.forward(x)
        assert 0.1 <= out.std() <= 10.0


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        net = Mlp([3, 16, 2], hidden_activation="relu", output_activation="sigmoid")
        net.init_xavier(Rng(35))
        path = tmp_path / "net.json"
        save_mlp(net, path)
        loaded = load_mlp(path)
        for w0, w1 in zip(net.weights, loaded.weights):
            assert np.array_equal(w0, w1)
        for b0, b1 in zip(net.biases, loaded.biases):
            assert np.array_equal(b0, b1)
        assert loaded.layer_dims == net.layer_dims
        assert loaded.hidden_activation == net.hidden_activation
        assert loaded.output_activation == net.output_activation
        x = Rng(36).normal(size=(10, 3))
        assert np.array_equal(net.forward(x)[0], loaded.forward(x)[0])

    def test_versioned_format(self):
        doc = mlp_to_dict(Mlp([2, 1]))
        assert doc["format"] == "fairprice-mlp"
        assert doc["version"] == 1
        doc["version"] = 99
        with pytest.raises(ValueError, match="version"):
            mlp_from_dict(doc)

    def test_json_text_is_stable(self, tmp_path):
        net = Mlp([2, 4, 1]).init_xavier(Rng(37))
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        save_mlp(net, p1)
        save_mlp(net, p2)
        assert p1.read_bytes() == p2.read_bytes()
        json.loads(p1.read_text())
