"""Optimizer updates against hand-computed steps."""

import math

import numpy as np
import pytest

from stn.optim import Optimizer, OptimizerSpec, OptimizerState, clip_grad_norm, optimizer_update
from stn.tensor import Tensor


def scalar(v=0.0):
    return Tensor(np.array([v]), requires_grad=True)


class TestSGD:
    def test_single_step(self):
        p = scalar()
        optimizer_update(OptimizerSpec("sgd", 0.1), [p], [np.array([1.0])], OptimizerState())
        assert p.data[0] == pytest.approx(-0.1)

    def test_zero_grad_unchanged(self):
        p = scalar(2.5)
        optimizer_update(OptimizerSpec("sgd", 0.1), [p], [np.zeros(1)], OptimizerState())
        assert p.data[0] == 2.5

    def test_momentum(self):
        p = scalar()
        opt = Optimizer([p], OptimizerSpec("sgd", 0.1, momentum=0.9))
        opt.step([np.array([1.0])])
        opt.step([np.array([1.0])])
        # buffers 1 then 1.9
        assert p.data[0] == pytest.approx(-0.1 - 0.19)

    def test_none_grad_skipped(self):
        p, q = scalar(1.0), scalar(1.0)
        optimizer_update(OptimizerSpec("sgd", 0.5), [p, q], [None, np.array([2.0])], OptimizerState())
        assert p.data[0] == 1.0 and q.data[0] == 0.0


class TestAdam:
    def test_first_step_by_hand(self):
        g, lr, b1, b2, eps = 0.3, 0.01, 0.9, 0.999, 1e-8
        p = scalar()
        optimizer_update(OptimizerSpec("adam", lr, beta1=b1, beta2=b2, eps=eps), [p], [np.array([g])],
                         OptimizerState())
        m_hat = (1 - b1) * g / (1 - b1)
        v_hat = (1 - b2) * g * g / (1 - b2)
        assert p.data[0] == pytest.approx(-lr * m_hat / (math.sqrt(v_hat) + eps), rel=1e-12)
        assert abs(p.data[0]) == pytest.approx(lr, rel=1e-6)

    def test_two_steps_by_hand(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = scalar()
        opt = Optimizer([p], OptimizerSpec("adam", lr))
        m = v = theta = 0.0
        for t, g in enumerate([0.5, -0.2], start=1):
            opt.step([np.array([g])])
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        assert p.data[0] == pytest.approx(theta, rel=1e-12)

    def test_uses_param_grad_by_default(self):
        p = scalar()
        opt = Optimizer([p], OptimizerSpec("adam", 0.1))
        p.grad = np.array([1.0])
        opt.step()
        assert p.data[0] == pytest.approx(-0.1, rel=1e-6)
        opt.zero_grad()
        assert p.grad is None


class TestOptimizerSpec:
    def test_invalid(self):
        with pytest.raises(ValueError):
            OptimizerSpec("rmsprop", 0.1)
        with pytest.raises(ValueError):
            OptimizerSpec("sgd", 0.0)

    def test_from_dict(self):
        assert OptimizerSpec.from_dict({"kind": "sgd", "lr": 0.2, "momentum": 0.5}).momentum == 0.5


def test_clip_grad_norm():
    grads = [np.array([3.0]), np.array([4.0]), None]
    clipped, total = clip_grad_norm(grads, 1.0)
    assert total == pytest.approx(5.0)
    np.testing.assert_allclose(clipped[0], [0.6])
    np.testing.assert_allclose(clipped[1], [0.8])
    assert clipped[2] is None
    same, _ = clip_grad_norm(grads, 10.0)
    np.testing.assert_array_equal(same[0], grads[0])
