"""Best-response models driven by the trainer.

A model owns its best-response parameters and knows how to turn a batch and a
(B, n) matrix of unconstrained hyperparameters into a training loss and a
validation loss. ``evaluate`` scores a whole split at the deterministic
hyperparameters with every stochastic regularizer switched off.
"""

from __future__ import annotations

import numpy as np

from .hyperspace import HyperSpace, apply_transform, deterministic_batch
from .layers import Dense, GatedLinearNet, HyperConv, HyperDense
from .oracles import Quadratic, QuadraticBilevel
from .regularizers import (
    RegularizerBinding,
    cutout_batch,
    dropout_apply,
    input_noise_apply,
    l2_penalty,
)
from .tensor import Tensor, cross_entropy, exp, matmul, no_grad, relu, reshape, square, tanh

ACTIVATIONS = {"relu": relu, "tanh": tanh, "identity": lambda x: x}


def quadratic_tape(q: Quadratic, lam: Tensor, theta: Tensor) -> Tensor:
    """Row-wise quadratic value for lam (B, n) and theta (B, m), shape (B,)."""
    out = 0.5 * (matmul(lam, Tensor(q.A)) * lam).sum(axis=1)
    out = out + (matmul(lam, Tensor(q.B)) * theta).sum(axis=1)
    out = out + 0.5 * (matmul(theta, Tensor(q.C)) * theta).sum(axis=1)
    out = out + matmul(lam, Tensor(q.d[:, None])).reshape(-1)
    return out + matmul(theta, Tensor(q.e[:, None])).reshape(-1)


class QuadraticModel:
    """Affine best response theta_hat(lam) = U (lam - center) + b_c for a quadratic bilevel problem.

    ``center`` only changes the coordinates of the fit, not the family: the
    intercept of the equivalent map ``U lam + b`` is ``intercept()``. Centering
    at the sampling mean keeps the fit well conditioned for small scales.
    """

    def __init__(self, problem: QuadraticBilevel, space: HyperSpace, rng=None, init_std: float = 0.0,
                 center=None):
        self.problem = problem
        self.space = space
        n, m = problem.n, problem.m
        if space.n != n:
            raise ValueError(f"space has {space.n} hyperparameters, problem needs {n}")
        rng = rng or np.random.default_rng(0)
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float).reshape(n)
        self.U = Tensor(init_std * rng.standard_normal((m, n)), requires_grad=True)
        self.b = Tensor(init_std * rng.standard_normal(m), requires_grad=True)

    def intercept(self) -> np.ndarray:
        """b in theta_hat(lam) = U lam + b."""
        return self.b.data - self.U.data @ self.center

    def parameters(self) -> list[Tensor]:
        return [self.U, self.b]

    def named_parameters(self) -> dict:
        return {"U": self.U, "b": self.b}

    def theta(self, lam: Tensor) -> Tensor:
        return matmul(lam - Tensor(self.center), self.U.T) + self.b

    def train_loss(self, batch, lam: Tensor, rng) -> Tensor:
        return quadratic_tape(self.problem.f, lam, self.theta(lam)).mean()

    def valid_loss(self, batch, lam: Tensor, rng) -> Tensor:
        return quadratic_tape(self.problem.F, lam, self.theta(lam)).mean()

    def evaluate(self, split=None) -> float:
        lam = self.space.lam.data
        theta = self.U.data @ lam + self.intercept()
        return float(self.problem.F(lam, theta))


class _Regularized:
    """Shared binding lookups for the classifier models."""

    space: HyperSpace
    bindings: list[RegularizerBinding]

    def _bound(self, kind: str) -> list[RegularizerBinding]:
        return [b for b in self.bindings if b.kind == kind]

    def _values(self, lam: Tensor, name: str) -> np.ndarray:
        j = self.space.index(name)
        return np.asarray(apply_transform(self.space.params[j], lam.data[:, j]), dtype=float)

    def _dropout_rates(self, lam: Tensor) -> dict:
        return {b.layer: self._values(lam, b.refs["rate"]) for b in self._bound("dropout")}

    def _penalty(self, lam: Tensor, layers, n_data: int) -> Tensor:
        total = Tensor(0.0)
        for b in self._bound("l2_penalty"):
            coeffs = self.space.column(lam, b.refs["weight"])
            total = total + l2_penalty(layers, coeffs, n_data, lam=lam if self.hyper else None)
        return total


class MLPClassifier(_Regularized):
    """Multi-layer perceptron built from hyper-layers (or plain layers when ``hyper=False``).

    Dropout sites: ``layer=-1`` is the input, ``layer=i`` follows hidden layer ``i``.
    """

    def __init__(self, d_in: int, hidden: list[int], n_classes: int, space: HyperSpace,
                 bindings: list[RegularizerBinding], n_train: int, rng: np.random.Generator,
                 hyper: bool = True, activation: str = "relu", valid_stochastic: bool = True):
        for b in bindings:
            b.validate(space)
        self.space, self.bindings, self.n_train = space, list(bindings), n_train
        self.hyper = hyper
        self.valid_stochastic = valid_stochastic
        self.act = ACTIVATIONS[activation]
        sizes = [d_in, *hidden, n_classes]
        self.layers = [
            HyperDense(a, b, space.n, rng) if hyper else Dense(a, b, rng)
            for a, b in zip(sizes[:-1], sizes[1:])
        ]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict:
        return {f"layer{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.named_parameters().items()}

    def forward(self, x, lam: Tensor, rng, training: bool) -> Tensor:
        rates = self._dropout_rates(lam)
        h = Tensor(x) if not isinstance(x, Tensor) else x
        if -1 in rates:
            h = dropout_apply(h, rates[-1], rng, training)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h, lam)
            if i < last:
                h = self.act(h)
                if i in rates:
                    h = dropout_apply(h, rates[i], rng, training)
        return h

    def _inputs(self, batch, lam, rng):
        x = batch.x
        for b in self._bound("input_noise"):
            x = input_noise_apply(x, self._values(lam, b.refs["scale"]), rng)
        return x

    def loss(self, out: Tensor, y) -> Tensor:
        return cross_entropy(out, y)

    def train_loss(self, batch, lam: Tensor, rng) -> Tensor:
        out = self.forward(self._inputs(batch, lam, rng), lam, rng, training=True)
        return self.loss(out, batch.y) + self._penalty(lam, self.layers, self.n_train)

    def valid_loss(self, batch, lam: Tensor, rng) -> Tensor:
        return self.loss(self.forward(batch.x, lam, rng, training=self.valid_stochastic), batch.y)

    def evaluate(self, split) -> float:
        with no_grad():
            lam = deterministic_batch(self.space, len(split))
            return self.loss(self.forward(split.x, lam, None, training=False), split.y).item()

    def accuracy(self, split) -> float:
        with no_grad():
            lam = deterministic_batch(self.space, len(split))
            logits = self.forward(split.x, lam, None, training=False)
        return float(np.mean(np.argmax(logits.data, axis=1) == split.y))


class MLPRegressor(MLPClassifier):
    """Same network with a single output trained on mean squared error."""

    def __init__(self, d_in: int, hidden: list[int], space: HyperSpace,
                 bindings: list[RegularizerBinding], n_train: int, rng: np.random.Generator, **kw):
        super().__init__(d_in, hidden, 1, space, bindings, n_train, rng, **kw)

    def loss(self, out: Tensor, y) -> Tensor:
        return square(out.reshape(-1) - Tensor(y)).mean()

    def accuracy(self, split) -> float:
        raise TypeError("accuracy is undefined for regression")


class ConvClassifier(_Regularized):
    """One hyper-convolution, ReLU, then a hyper-dense readout over the flattened map."""

    def __init__(self, side: int, channels: int, n_classes: int, space: HyperSpace,
                 bindings: list[RegularizerBinding], n_train: int, rng: np.random.Generator,
                 hyper: bool = True, kernel: int = 3, valid_stochastic: bool = True):
        for b in bindings:
            b.validate(space)
        self.space, self.bindings, self.n_train = space, list(bindings), n_train
        self.hyper = hyper
        self.valid_stochastic = valid_stochastic
        n = space.n if hyper else 0
        self.conv = HyperConv(1, channels, kernel, n, rng, padding=kernel // 2)
        self.flat = channels * side * side
        self.readout = HyperDense(self.flat, n_classes, space.n, rng) if hyper \
            else Dense(self.flat, n_classes, rng)

    @property
    def layers(self) -> list:
        return [self.conv, self.readout]

    def parameters(self) -> list[Tensor]:
        return self.conv.parameters() + self.readout.parameters()

    def named_parameters(self) -> dict:
        out = {f"conv.{k}": v for k, v in self.conv.named_parameters().items()}
        out.update({f"readout.{k}": v for k, v in self.readout.named_parameters().items()})
        return out

    def forward(self, x, lam: Tensor, rng, training: bool) -> Tensor:
        conv_lam = lam if self.hyper else Tensor(np.zeros((lam.shape[0], 0)))
        h = relu(self.conv(Tensor(x), conv_lam))
        h = reshape(h, (h.shape[0], self.flat))
        rates = self._dropout_rates(lam)
        if 0 in rates:
            h = dropout_apply(h, rates[0], rng, training)
        return self.readout(h, lam)

    def train_loss(self, batch, lam: Tensor, rng) -> Tensor:
        x = batch.x
        for b in self._bound("cutout"):
            holes = self._values(lam, b.refs["holes"]).astype(int)
            length = self._values(lam, b.refs["length"]).astype(int)
            x = cutout_batch(x, holes, length, rng)
        for b in self._bound("input_noise"):
            x = input_noise_apply(x, self._values(lam, b.refs["scale"]), rng)
        logits = self.forward(x, lam, rng, training=True)
        return cross_entropy(logits, batch.y) + self._penalty(lam, self.layers, self.n_train)

    def valid_loss(self, batch, lam: Tensor, rng) -> Tensor:
        return cross_entropy(self.forward(batch.x, lam, rng, self.valid_stochastic), batch.y)

    def evaluate(self, split) -> float:
        with no_grad():
            lam = deterministic_batch(self.space, len(split))
            return cross_entropy(self.forward(split.x, lam, None, False), split.y).item()


class GatedRidgeModel:
    """Gated two-layer linear regressor trained on squared error plus the Jacobian penalty.

    The single hyperparameter is the unconstrained log penalty weight; each
    example's loss is ``(y - t)^2 + exp(lam_i) ||dy/dx||^2 / |D|``.
    """

    def __init__(self, Q0, s0, space: HyperSpace, n_train: int, v=None, c=None):
        if space.n != 1:
            raise ValueError("the gated ridge model tunes exactly one hyperparameter")
        self.net = GatedLinearNet(Q0, s0, v, c)
        self.space, self.n_train = space, n_train

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def named_parameters(self) -> dict:
        return self.net.named_parameters()

    def train_loss(self, batch, lam: Tensor, rng) -> Tensor:
        resid = self.net(batch.x, lam) - Tensor(batch.y)
        jac_sq = square(self.net.effective_weights(lam)).sum(axis=1)
        penalty = exp(lam.reshape(-1)) * jac_sq / float(self.n_train)
        return (square(resid) + penalty).mean()

    def valid_loss(self, batch, lam: Tensor, rng) -> Tensor:
        return square(self.net(batch.x, lam) - Tensor(batch.y)).mean()

    def evaluate(self, split) -> float:
        with no_grad():
            lam = deterministic_batch(self.space, len(split))
            return square(self.net(split.x, lam) - Tensor(split.y)).mean().item()

    def predict(self, x, lam: float) -> np.ndarray:
        with no_grad():
            return self.net(x, Tensor(np.full((len(x), 1), lam))).data
