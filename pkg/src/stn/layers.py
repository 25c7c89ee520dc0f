"""Layers whose weights respond to a hyperparameter vector.

``HyperDense`` and ``HyperConv`` compute the ordinary pre-activation plus a
correction gated by a linear map of the (unconstrained) hyperparameters, so
each example in a batch can carry its own hyperparameter vector.
``GatedLinearNet`` is the sigmoid-gated two-layer linear model whose gates
reproduce the ridge-regression path exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    as_tensor,
    conv2d,
    matmul,
    reshape,
    sigmoid,
    square,
)


def _uniform(rng, bound, shape):
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Dense:
    """Plain affine layer, the fixed-hyperparameter baseline."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_in)
        self.d_in, self.d_out = d_in, d_out
        self.W = _uniform(rng, bound, (d_out, d_in))
        self.b = _uniform(rng, bound, (d_out,))

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]

    def named_parameters(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}

    def weights(self) -> list[Tensor]:
        return [self.W]

    def forward(self, x, lam=None) -> Tensor:
        return matmul(as_tensor(x), self.W.T) + self.b

    __call__ = forward

    def weight_sq_norm(self, lam=None) -> Tensor:
        return square(self.W).sum()

    def param_count(self) -> int:
        return self.d_out * self.d_in + self.d_out


class HyperDense:
    """Dense layer with weights and bias affine in the hyperparameters.

    For a batch ``x`` (B x D_in) and hyperparameters ``lam`` (B x n)::

        out = x W_elem^T + b_elem + (lam V^T) * (x W_hyper^T) + (lam C_b^T) * b_hyper
    """

    def __init__(self, d_in: int, d_out: int, n_hparams: int, rng: np.random.Generator,
                 scale_std: float = 0.01):
        self.d_in, self.d_out, self.n = d_in, d_out, n_hparams
        bound = 1.0 / math.sqrt(d_in)
        self.W_elem = _uniform(rng, bound, (d_out, d_in))
        self.W_hyper = _uniform(rng, bound, (d_out, d_in))
        self.b_elem = _uniform(rng, bound, (d_out,))
        self.b_hyper = _uniform(rng, bound, (d_out,))
        self.V = Tensor(rng.normal(0.0, scale_std, size=(d_out, n_hparams)), requires_grad=True)
        self.C_b = Tensor(rng.normal(0.0, scale_std, size=(d_out, n_hparams)), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        return {"W_elem": self.W_elem, "W_hyper": self.W_hyper, "V": self.V,
                "b_elem": self.b_elem, "b_hyper": self.b_hyper, "C_b": self.C_b}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def weights(self) -> list[Tensor]:
        return [self.W_elem, self.W_hyper]

    def _check(self, x: Tensor, lam: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"expected input (B, {self.d_in}), got {x.shape}")
        if lam.ndim != 2 or lam.shape[1] != self.n:
            raise ShapeError(f"expected hyperparameters (B, {self.n}), got {lam.shape}")
        if lam.shape[0] != x.shape[0]:
            raise ShapeError(f"batch size mismatch: x {x.shape} vs hyperparameters {lam.shape}")

    def forward(self, x, lam) -> Tensor:
        x, lam = as_tensor(x), as_tensor(lam)
        self._check(x, lam)
        out = matmul(x, self.W_elem.T) + self.b_elem
        if self.n == 0:
            return out
        w_scale = matmul(lam, self.V.T)
        b_scale = matmul(lam, self.C_b.T)
        return out + w_scale * matmul(x, self.W_hyper.T) + b_scale * self.b_hyper

    __call__ = forward

    def effective_weight(self, lam_row) -> np.ndarray:
        """W_hat(lam) for a single hyperparameter vector, as a plain array."""
        s = self.V.data @ np.asarray(lam_row, dtype=float)
        return self.W_elem.data + s[:, None] * self.W_hyper.data

    def weight_sq_norm(self, lam) -> Tensor:
        """Per-example squared Frobenius norm of W_hat(lam_i), shape (B,)."""
        lam = as_tensor(lam)
        if self.n == 0:
            return Tensor(np.ones(lam.shape[0])) * square(self.W_elem).sum()
        a = square(self.W_elem).sum(axis=1)
        c = (self.W_elem * self.W_hyper).sum(axis=1)
        h = square(self.W_hyper).sum(axis=1)
        s = matmul(lam, self.V.T)
        return (a + 2.0 * s * c + square(s) * h).sum(axis=1)

    def param_count(self) -> int:
        return self.d_out * (2 * self.d_in + self.n) + self.d_out * (2 + self.n)


class HyperConv:
    """Convolution whose per-channel kernel and bias are affine in the hyperparameters.

    Channel ``c`` of the output is
    ``elem_scalar * (conv(x, K_elem) + b_elem) + (lam.u_c) conv(x, K_hyper) + (lam.a_c) b_hyper``.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, n_hparams: int,
                 rng: np.random.Generator, padding: int = 0, stride: int = 1,
                 bias: bool = True, scale_std: float = 0.01):
        self.c_in, self.c_out, self.k, self.n = c_in, c_out, kernel, n_hparams
        self.padding, self.stride, self.bias = padding, stride, bias
        bound = 1.0 / math.sqrt(c_in * kernel * kernel)
        shape = (c_out, c_in, kernel, kernel)
        self.kernel_elem = _uniform(rng, bound, shape)
        self.kernel_hyper = _uniform(rng, bound, shape)
        self.bias_elem = _uniform(rng, bound, (c_out,)) if bias else None
        self.bias_hyper = _uniform(rng, bound, (c_out,)) if bias else None
        # rows are u_c and a_c
        self.u = Tensor(rng.normal(0.0, scale_std, size=(c_out, n_hparams)), requires_grad=True)
        self.a = Tensor(rng.normal(0.0, scale_std, size=(c_out, n_hparams)), requires_grad=True)
        self.elem_scalar = Tensor(np.ones(1), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"kernel_elem": self.kernel_elem, "kernel_hyper": self.kernel_hyper}
        if self.bias:
            out.update(bias_elem=self.bias_elem, bias_hyper=self.bias_hyper)
        out.update(u=self.u, a=self.a, elem_scalar=self.elem_scalar)
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def weights(self) -> list[Tensor]:
        return [self.kernel_elem, self.kernel_hyper]

    def forward(self, x, lam) -> Tensor:
        x, lam = as_tensor(x), as_tensor(lam)
        if lam.ndim != 2 or lam.shape[1] != self.n:
            raise ShapeError(f"expected hyperparameters (B, {self.n}), got {lam.shape}")
        if x.ndim != 4 or lam.shape[0] != x.shape[0]:
            raise ShapeError(f"batch size mismatch: x {x.shape} vs hyperparameters {lam.shape}")
        out = conv2d(x, self.kernel_elem, self.stride, self.padding)
        if self.bias:
            out = out + reshape(self.bias_elem, (1, self.c_out, 1, 1))
        out = out * self.elem_scalar
        if self.n == 0:
            return out
        B = x.shape[0]
        w_scale = reshape(matmul(lam, self.u.T), (B, self.c_out, 1, 1))
        out = out + w_scale * conv2d(x, self.kernel_hyper, self.stride, self.padding)
        if self.bias:
            b_scale = matmul(lam, self.a.T) * self.bias_hyper
            out = out + reshape(b_scale, (B, self.c_out, 1, 1))
        return out

    __call__ = forward

    def weight_sq_norm(self, lam) -> Tensor:
        """Per-example squared norm of the effective kernel elem_scalar K_elem + (lam.u_c) K_hyper."""
        lam = as_tensor(lam)
        ke = reshape(self.kernel_elem * self.elem_scalar, (self.c_out, -1))
        kh = reshape(self.kernel_hyper, (self.c_out, -1))
        a = square(ke).sum(axis=1)
        c = (ke * kh).sum(axis=1)
        h = square(kh).sum(axis=1)
        s = matmul(lam, self.u.T)
        return (a + 2.0 * s * c + square(s) * h).sum(axis=1)

    def param_count(self) -> int:
        plain = self.c_out * self.c_in * self.k * self.k + (self.c_out if self.bias else 0)
        return 2 * plain + 2 * self.n * self.c_out + 1


class GatedLinearNet:
    """y(x; lam) = s0 . (sigmoid(lam v + c) * (Q0 x)) with fixed Q0, s0."""

    def __init__(self, Q0, s0, v=None, c=None):
        self.Q0 = np.asarray(Q0, dtype=float)
        self.s0 = np.asarray(s0, dtype=float)
        D = self.Q0.shape[0]
        if self.Q0.shape != (D, D) or self.s0.shape != (D,):
            raise ShapeError(f"Q0 must be DxD and s0 length D, got {self.Q0.shape}, {self.s0.shape}")
        self.v = Tensor(np.zeros(D) if v is None else v, requires_grad=True)
        self.c = Tensor(np.zeros(D) if c is None else c, requires_grad=True)

    @property
    def dim(self) -> int:
        return self.Q0.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.v, self.c]

    def named_parameters(self) -> dict[str, Tensor]:
        return {"v": self.v, "c": self.c}

    def gates(self, lam) -> Tensor:
        """Gate matrix sigmoid(lam_i v + c), shape (B, D), for lam of shape (B, 1)."""
        lam = as_tensor(lam)
        return sigmoid(matmul(lam, reshape(self.v, (1, -1))) + self.c)

    def forward(self, x, lam) -> Tensor:
        """Batched predictions: x is (B, D), lam is (B, 1); returns (B,)."""
        x = as_tensor(x)
        hidden = matmul(x, Tensor(self.Q0.T))
        return matmul(self.gates(lam) * hidden, Tensor(self.s0[:, None])).reshape(-1)

    __call__ = forward

    def effective_weights(self, lam) -> Tensor:
        """u(lam_i) = Q*(lam_i)^T s0 per example, shape (B, D)."""
        return matmul(self.gates(lam) * Tensor(self.s0), Tensor(self.Q0))

    def param_count(self) -> int:
        return 2 * self.dim


def gated_forward(net: GatedLinearNet, x, lam: float) -> float:
    x = np.asarray(x, dtype=float)
    gate = 1.0 / (1.0 + np.exp(-(lam * net.v.data + net.c.data)))
    return float(net.s0 @ (gate * (net.Q0 @ x)))


def hyper_dense_forward(layer: HyperDense, x, lam_batch) -> Tensor:
    return layer.forward(x, lam_batch)


def hyper_conv_forward(layer: HyperConv, x, lam_batch) -> Tensor:
    return layer.forward(x, lam_batch)


def param_count(layer) -> int:
    return layer.param_count()
