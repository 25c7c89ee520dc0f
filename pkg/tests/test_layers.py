"""Hyper-layers: parameter counts, reductions to plain layers, batch/loop equivalence and gradients."""

import numpy as np
import pytest

from stn.layers import (
    Dense,
    GatedLinearNet,
    HyperConv,
    HyperDense,
    gated_forward,
    hyper_conv_forward,
    hyper_dense_forward,
    param_count,
)
from stn.oracles import RidgeProblem, gated_response_params, ridge_solution
from stn.tensor import ShapeError, Tensor, conv2d, grad_check, square, tanh


def plain_dense(layer, x):
    return x @ layer.W_elem.data.T + layer.b_elem.data


def naive_conv(x, w, padding):
    B, C, H, W = x.shape
    O, _, K, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((B, O, H + 2 * padding - K + 1, W + 2 * padding - K + 1))
    for b in range(B):
        for o in range(O):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    out[b, o, i, j] = np.sum(xp[b, :, i:i + K, j:j + K] * w[o])
    return out


class TestParamCount:
    def test_dense_count(self):
        layer = HyperDense(3, 2, 4, np.random.default_rng(0))
        assert param_count(layer) == 32
        assert sum(p.size for p in layer.parameters()) == 32

    def test_dense_no_hyperparameters_doubles_plain(self):
        rng = np.random.default_rng(0)
        assert param_count(HyperDense(7, 5, 0, rng)) == 2 * param_count(Dense(7, 5, rng))

    def test_conv_count(self):
        layer = HyperConv(1, 2, 3, 5, np.random.default_rng(0))
        assert param_count(layer) == 61
        assert sum(p.size for p in layer.parameters()) == 61

    @pytest.mark.parametrize("d_in,d_out,n", [(1, 1, 1), (4, 3, 2), (10, 6, 0)])
    def test_dense_formula(self, d_in, d_out, n):
        layer = HyperDense(d_in, d_out, n, np.random.default_rng(1))
        assert param_count(layer) == d_out * (2 * d_in + n) + d_out * (2 + n)
        assert sum(p.size for p in layer.parameters()) == param_count(layer)


class TestHyperDense:
    def setup_method(self):
        self.rng = np.random.default_rng(2)
        self.layer = HyperDense(5, 3, 2, self.rng)
        self.x = self.rng.normal(size=(4, 5))

    def test_zero_generators_reduce_to_dense(self):
        self.layer.V.data[:] = 0.0
        self.layer.C_b.data[:] = 0.0
        lam = self.rng.normal(size=(4, 2))
        out = hyper_dense_forward(self.layer, Tensor(self.x), Tensor(lam)).data
        np.testing.assert_array_equal(out, plain_dense(self.layer, self.x))

    def test_zero_lambda_reduces_to_dense(self):
        out = self.layer(self.x, np.zeros((4, 2))).data
        np.testing.assert_array_equal(out, plain_dense(self.layer, self.x))

    def test_batch_equals_per_example_loop(self):
        lam = self.rng.normal(size=(4, 2))
        batch = self.layer(self.x, lam).data
        loop = np.vstack([self.layer(self.x[i:i + 1], lam[i:i + 1]).data for i in range(4)])
        np.testing.assert_allclose(batch, loop, rtol=0, atol=1e-12)

    def test_affine_in_lambda(self):
        l1, l2 = self.rng.normal(size=(4, 2)), self.rng.normal(size=(4, 2))
        f = lambda lam: self.layer(self.x, lam).data
        np.testing.assert_allclose(f(l1) + f(l2) - f(np.zeros((4, 2))), f(l1 + l2), atol=1e-10)

    def test_effective_weight_matches_forward(self):
        lam = self.rng.normal(size=2)
        W = self.layer.effective_weight(lam)
        b = self.layer.b_elem.data + (self.layer.C_b.data @ lam) * self.layer.b_hyper.data
        np.testing.assert_allclose(self.layer(self.x[:1], lam[None]).data, self.x[:1] @ W.T + b, atol=1e-12)

    def test_weight_sq_norm(self):
        lam = self.rng.normal(size=(4, 2))
        expected = [np.sum(self.layer.effective_weight(row) ** 2) for row in lam]
        np.testing.assert_allclose(self.layer.weight_sq_norm(Tensor(lam)).data, expected, rtol=1e-12)

    def test_batch_size_mismatch(self):
        with pytest.raises(ShapeError, match="batch size"):
            self.layer(self.x, np.zeros((3, 2)))

    def test_gradients_random_configs(self):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            d_in, d_out, n, B = rng.integers(1, 5, size=4)
            layer = HyperDense(d_in, d_out, n, rng, scale_std=0.5)
            x = Tensor(rng.uniform(-2, 2, size=(B, d_in)), requires_grad=True)
            lam = Tensor(rng.uniform(-2, 2, size=(B, n)), requires_grad=True)
            err = grad_check(lambda: square(tanh(layer(x, lam))).mean() + 0.1 * layer.weight_sq_norm(lam).mean(),
                             [x, lam, *layer.parameters()])
            assert err <= 1e-5, (seed, err)


class TestHyperConv:
    def setup_method(self):
        self.rng = np.random.default_rng(3)

    def test_zero_generators_scale_plain_conv(self):
        layer = HyperConv(2, 3, 3, 2, self.rng, padding=1)
        layer.u.data[:] = 0.0
        layer.a.data[:] = 0.0
        layer.elem_scalar.data[:] = 1.7
        x = self.rng.normal(size=(2, 2, 5, 5))
        out = hyper_conv_forward(layer, Tensor(x), Tensor(self.rng.normal(size=(2, 2)))).data
        plain = conv2d(Tensor(x), layer.kernel_elem, padding=1).data + layer.bias_elem.data[None, :, None, None]
        np.testing.assert_allclose(out, 1.7 * plain, atol=1e-12)

    def test_one_by_one_matches_dense(self):
        d_in, d_out, n = 3, 2, 2
        conv = HyperConv(d_in, d_out, 1, n, self.rng)
        dense = HyperDense(d_in, d_out, n, self.rng)
        dense.W_elem.data[:] = conv.kernel_elem.data[:, :, 0, 0]
        dense.W_hyper.data[:] = conv.kernel_hyper.data[:, :, 0, 0]
        dense.b_elem.data[:] = conv.bias_elem.data
        dense.b_hyper.data[:] = conv.bias_hyper.data
        dense.V.data[:] = conv.u.data
        dense.C_b.data[:] = conv.a.data
        x = self.rng.normal(size=(4, d_in))
        lam = self.rng.normal(size=(4, n))
        out = conv(x.reshape(4, d_in, 1, 1), lam).data.reshape(4, d_out)
        np.testing.assert_allclose(out, dense(x, lam).data, atol=1e-12)

    def test_against_naive_convolution(self):
        layer = HyperConv(2, 3, 3, 2, self.rng, padding=1, scale_std=0.5)
        x = self.rng.normal(size=(4, 2, 5, 5))
        lam = self.rng.normal(size=(4, 2))
        out = layer(x, lam).data
        for i in range(4):
            s = layer.u.data @ lam[i]
            t = layer.a.data @ lam[i]
            ref = (naive_conv(x[i:i + 1], layer.kernel_elem.data, 1) + layer.bias_elem.data[None, :, None, None])
            ref = ref + s[None, :, None, None] * naive_conv(x[i:i + 1], layer.kernel_hyper.data, 1)
            ref = ref + (t * layer.bias_hyper.data)[None, :, None, None]
            np.testing.assert_allclose(out[i:i + 1], ref, atol=1e-10)

    def test_kernel_larger_than_input(self):
        layer = HyperConv(1, 1, 5, 1, self.rng)
        with pytest.raises(ShapeError):
            layer(np.ones((1, 1, 3, 3)), np.zeros((1, 1)))

    def test_gradients_random_configs(self):
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            c_in, c_out, n = rng.integers(1, 3, size=3)
            k = int(rng.choice([1, 3]))
            layer = HyperConv(c_in, c_out, k, n, rng, padding=int(rng.integers(0, 2)), scale_std=0.5)
            x = Tensor(rng.uniform(-2, 2, size=(2, c_in, 4, 4)), requires_grad=True)
            lam = Tensor(rng.uniform(-2, 2, size=(2, n)), requires_grad=True)
            err = grad_check(lambda: square(tanh(layer(x, lam))).mean() + 0.1 * layer.weight_sq_norm(lam).mean(),
                             [x, lam, *layer.parameters()])
            assert err <= 1e-5, (seed, err)


class TestGatedLinearNet:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.Q0 = rng.normal(size=(3, 3))
        self.s0 = rng.normal(size=3)
        self.x = rng.normal(size=3)

    def test_half_gates(self):
        net = GatedLinearNet(self.Q0, self.s0)
        assert gated_forward(net, self.x, 1.3) == pytest.approx(0.5 * self.s0 @ self.Q0 @ self.x, rel=1e-12)

    def test_open_gates_limit(self):
        net = GatedLinearNet(self.Q0, self.s0, v=-np.ones(3), c=np.zeros(3))
        assert gated_forward(net, self.x, -60.0) == pytest.approx(self.s0 @ self.Q0 @ self.x, rel=1e-12)

    def test_ridge_parameters_reproduce_ridge_predictions(self):
        rng = np.random.default_rng(5)
        X, t = rng.normal(size=(3, 3)), rng.normal(size=3)
        rp = RidgeProblem(X, t)
        net = GatedLinearNet(*gated_response_params(rp))
        for lam in (-2.0, 0.0, 2.0):
            assert gated_forward(net, self.x, lam) == pytest.approx(ridge_solution(rp, lam) @ self.x, abs=1e-10)

    def test_batched_forward_and_weights(self):
        net = GatedLinearNet(self.Q0, self.s0, v=np.array([1.0, -2.0, 0.5]), c=np.array([0.1, 0.2, -0.3]))
        X = np.random.default_rng(6).normal(size=(4, 3))
        lam = np.array([[-1.0], [0.0], [0.5], [2.0]])
        batch = net(X, lam).data
        loop = [gated_forward(net, X[i], lam[i, 0]) for i in range(4)]
        np.testing.assert_allclose(batch, loop, atol=1e-12)
        u = net.effective_weights(lam).data
        np.testing.assert_allclose(np.sum(u * X, axis=1), batch, atol=1e-12)

    def test_gradients(self):
        net = GatedLinearNet(self.Q0, self.s0, v=np.array([1.0, -2.0, 0.5]), c=np.array([0.1, 0.2, -0.3]))
        X = Tensor(np.random.default_rng(7).normal(size=(4, 3)))
        lam = Tensor(np.array([[-1.0], [0.0], [0.5], [2.0]]), requires_grad=True)
        assert grad_check(lambda: square(net(X, lam)).sum(), [lam, net.v, net.c]) <= 1e-5
