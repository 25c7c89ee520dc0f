"""Hyperparameter-controlled regularizers and augmentations.

Rates and counts arrive already transformed to their constrained values, one
per example. The stochastic ones are the identity when ``training`` is false.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, as_tensor, exp, matmul, reshape, square

BINDING_KINDS = ("dropout", "l2_penalty", "jacobian_penalty", "cutout", "input_noise")


@dataclass
class RegularizerBinding:
    """Ties a regularizer to hyperparameter names in a HyperSpace.

    ``refs`` maps a role to a hyperparameter name: ``rate`` for dropout,
    ``weight`` for the penalties, ``holes``/``length`` for cutout and
    ``scale`` for input noise. ``layer`` selects the dropout site (-1 is the
    input).
    """

    kind: str
    refs: dict = field(default_factory=dict)
    layer: int = 0

    def validate(self, space) -> None:
        if self.kind not in BINDING_KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        required = {
            "dropout": ("rate",), "l2_penalty": ("weight",), "jacobian_penalty": ("weight",),
            "cutout": ("holes", "length"), "input_noise": ("scale",),
        }[self.kind]
        for role in required:
            if role not in self.refs:
                raise KeyError(f"{self.kind} binding needs a {role!r} hyperparameter")
        for role, name in self.refs.items():
            if name not in space:
                raise KeyError(f"{self.kind}.{role} refers to unknown hyperparameter {name!r}")
            hp = space[name]
            if self.kind == "dropout" and hp.kind != "sigmoid_bounded":
                raise ValueError(f"dropout rate {name!r} must be sigmoid_bounded, got {hp.kind}")
            if self.kind == "dropout" and not (hp.lo >= 0 and hp.hi < 1):
                raise ValueError(f"dropout rate {name!r} must lie in [0, 1)")
            if self.kind == "cutout" and hp.kind != "discretized":
                raise ValueError(f"cutout {role} {name!r} must be discretized, got {hp.kind}")


def dropout_apply(x, rates, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout with a separate rate for each row of ``x``."""
    x = as_tensor(x)
    if not training:
        return x
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (x.shape[0],))
    if np.any(rates >= 1.0) or np.any(rates < 0.0):
        raise ValueError("dropout rates must lie in [0, 1)")
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    keep = 1.0 - rates.reshape(shape)
    mask = (rng.random(x.shape) < keep) / keep
    return x * Tensor(mask)


def l2_penalty(params, coeffs, dataset_size: int, lam=None) -> Tensor:
    """mean_i coeffs_i * ||theta||^2 / |D|.

    ``params`` is a list of tensors or layers. Layers exposing
    ``weight_sq_norm`` contribute the norm of their per-example effective
    weights when ``lam`` (B x n, unconstrained) is given.
    """
    coeffs = as_tensor(coeffs)
    total = None
    for p in params:
        if isinstance(p, Tensor):
            sq = square(p).sum()
        elif lam is not None:
            sq = p.weight_sq_norm(lam)
        else:
            sq = sum((square(w).sum() for w in p.weights()), Tensor(0.0))
        total = sq if total is None else total + sq
    if total is None:
        return Tensor(0.0)
    return (coeffs * total).mean() / float(dataset_size)


@dataclass
class TwoLayerLinear:
    """y = s^T Q x; its input Jacobian is Q^T s everywhere."""

    Q: Tensor
    s: Tensor
    linear = True

    def __call__(self, x) -> Tensor:
        return matmul(matmul(as_tensor(x), self.Q.T), reshape(self.s, (-1, 1))).reshape(-1)

    def jacobian(self) -> Tensor:
        return matmul(reshape(self.s, (1, -1)), self.Q).reshape(-1)


def jacobian_penalty_linear(net, lam, dataset_size: int = 1) -> Tensor:
    """exp(lam) * ||dy/dx||^2 / |D| for a two-layer linear network."""
    if isinstance(net, tuple):
        net = TwoLayerLinear(as_tensor(net[0]), as_tensor(net[1]))
    if not getattr(net, "linear", False):
        raise TypeError("jacobian_penalty_linear only supports linear networks")
    return exp(as_tensor(lam)) * square(net.jacobian()).sum() / float(dataset_size)


def cutout_apply(img: np.ndarray, holes: int, length: int, rng: np.random.Generator) -> np.ndarray:
    """Zero ``holes`` squares of side ``length`` centred on uniform pixels (clipped at borders)."""
    img = np.array(img, dtype=float, copy=True)
    holes, length = int(holes), int(length)
    if holes < 0 or length < 0:
        raise ValueError("holes and length must be non-negative")
    if holes == 0 or length == 0:
        return img
    H, W = img.shape[-2:]
    for _ in range(holes):
        cy, cx = rng.integers(H), rng.integers(W)
        y0, y1 = max(cy - length // 2, 0), min(cy + length - length // 2, H)
        x0, x1 = max(cx - length // 2, 0), min(cx + length - length // 2, W)
        img[..., y0:y1, x0:x1] = 0.0
    return img


def cutout_batch(images: np.ndarray, holes, length, rng: np.random.Generator) -> np.ndarray:
    holes = np.broadcast_to(np.asarray(holes), (len(images),))
    length = np.broadcast_to(np.asarray(length), (len(images),))
    return np.stack([cutout_apply(im, h, l, rng) for im, h, l in zip(images, holes, length)])


def input_noise_apply(x, scale, rng: np.random.Generator, training: bool = True):
    """x + scale_i * z with fresh standard-normal z for every entry."""
    if not training:
        return x
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (data.shape[0],))
    if np.any(scale < 0):
        raise ValueError("noise scale must be non-negative")
    noise = scale.reshape((-1,) + (1,) * (data.ndim - 1)) * rng.standard_normal(data.shape)
    if isinstance(x, Tensor):
        return x + Tensor(noise)
    return data + noise
