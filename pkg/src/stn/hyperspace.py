"""Hyperparameter descriptors, constrained transforms and the perturbation model.

Each hyperparameter lives in an unconstrained coordinate ``lam``; a transform
maps it to its legal range. Perturbations are Gaussian in the unconstrained
coordinate with per-hyperparameter scale ``sigma = exp(log_sigma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, exp, reshape, sigmoid

KINDS = ("sigmoid_bounded", "exp_positive", "identity", "discretized")

LOG_SIGMA_FLOOR = math.log(1e-4)
LOG_SIGMA_CEIL = math.log(10.0)
GAUSSIAN_ENTROPY_CONST = 0.5 * math.log(2.0 * math.pi * math.e)
DEFAULT_TAU = 0.001


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass
class HyperParam:
    """Descriptor of one hyperparameter; its values live in the owning HyperSpace."""

    name: str
    kind: str = "identity"
    lo: float = 0.0
    hi: float = 1.0
    per_example: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("sigmoid_bounded", "discretized") and not self.hi >= self.lo:
            raise ValueError(f"{self.name}: need lo <= hi, got [{self.lo}, {self.hi}]")
        if self.kind == "discretized" and (self.lo != int(self.lo) or self.hi != int(self.hi)):
            raise ValueError(f"{self.name}: discretized bounds must be integers")

    @property
    def discrete(self) -> bool:
        return self.kind == "discretized"

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind in ("sigmoid_bounded", "discretized"):
            return (self.lo, self.hi)
        if self.kind == "exp_positive":
            return (0.0, math.inf)
        return (-math.inf, math.inf)


def apply_transform(hp: HyperParam, lam):
    """Map unconstrained ``lam`` (scalar or array) into the constrained space."""
    lam = np.asarray(lam, dtype=float)
    if hp.kind == "sigmoid_bounded":
        out = hp.lo + (hp.hi - hp.lo) * _sigmoid(lam)
    elif hp.kind == "exp_positive":
        out = np.exp(lam)
    elif hp.kind == "identity":
        out = lam.copy()
    else:
        # round half up; np.round would send 2.5 to 2
        out = np.floor(hp.lo + (hp.hi - hp.lo) * _sigmoid(lam) + 0.5).astype(np.int64)
    if out.ndim == 0:
        return int(out) if hp.discrete else float(out)
    return out


def transform_tensor(hp: HyperParam, lam: Tensor) -> Tensor:
    """Differentiable version of ``apply_transform`` for continuous kinds."""
    lam = as_tensor(lam)
    if hp.kind == "sigmoid_bounded":
        return hp.lo + (hp.hi - hp.lo) * sigmoid(lam)
    if hp.kind == "exp_positive":
        return exp(lam)
    if hp.kind == "identity":
        return lam
    raise TypeError(f"{hp.name}: discretized transforms are not differentiable")


def inverse_transform(hp: HyperParam, value: float) -> float:
    value = float(value)
    if hp.kind == "discretized":
        raise ValueError(f"{hp.name}: the discretized transform has no unique inverse")
    if hp.kind == "identity":
        return value
    if hp.kind == "exp_positive":
        if value <= 0:
            raise ValueError(f"{hp.name}: value {value} outside (0, inf)")
        return math.log(value)
    if not hp.lo < value < hp.hi:
        raise ValueError(f"{hp.name}: value {value} outside open range ({hp.lo}, {hp.hi})")
    p = (value - hp.lo) / (hp.hi - hp.lo)
    return math.log(p) - math.log1p(-p)


class HyperSpace:
    """Ordered hyperparameters with their current ``lam`` and ``log_sigma`` vectors.

    ``lam`` and ``log_sigma`` are single tensors of shape (n,) so they can be
    handed to an optimizer directly.
    """

    def __init__(self, params: list[HyperParam], init=None, sigma=0.5, tau: float = DEFAULT_TAU):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError(f"hyperparameter names must be unique, got {names}")
        self.params = list(params)
        self.tau = float(tau)
        if tau < 0:
            raise ValueError("tau must be non-negative")
        n = len(params)
        self.lam = Tensor(np.zeros(n), requires_grad=True)
        self.log_sigma = Tensor(np.zeros(n), requires_grad=True)
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
        for j in range(n):
            self.set_sigma(j, sig[j])
        if init is not None:
            if isinstance(init, dict):
                for name, value in init.items():
                    self.set_constrained(name, value)
            else:
                self.lam.data[:] = np.asarray(init, dtype=float)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def n(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def index(self, name: str) -> int:
        for j, p in enumerate(self.params):
            if p.name == name:
                return j
        raise KeyError(f"no hyperparameter named {name!r}")

    def __getitem__(self, name: str) -> HyperParam:
        return self.params[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)

    def set_sigma(self, j, value: float) -> None:
        j = self.index(j) if isinstance(j, str) else j
        value = float(value)
        self.log_sigma.data[j] = math.log(value) if value > 0 else -math.inf
        self.clamp_scales()

    def clamp_scales(self) -> None:
        np.clip(self.log_sigma.data, LOG_SIGMA_FLOOR, LOG_SIGMA_CEIL, out=self.log_sigma.data)

    def set_constrained(self, name: str, value) -> None:
        j = self.index(name)
        hp = self.params[j]
        if hp.discrete:
            self.lam.data[j] = discrete_preimage(hp, value)
        else:
            self.lam.data[j] = inverse_transform(hp, value)

    def constrained_batch(self, lam_batch) -> np.ndarray:
        """Constrained values for a (B, n) array of unconstrained rows."""
        lam_batch = np.asarray(lam_batch.data if isinstance(lam_batch, Tensor) else lam_batch,
                               dtype=float)
        out = np.empty_like(lam_batch)
        for j, hp in enumerate(self.params):
            out[:, j] = apply_transform(hp, lam_batch[:, j])
        return out

    def column(self, lam_batch: Tensor, name: str) -> Tensor:
        """Constrained column ``name`` as a tensor (differentiable unless discrete)."""
        j = self.index(name)
        hp = self.params[j]
        col = lam_batch[:, j]
        if hp.discrete:
            return Tensor(apply_transform(hp, col.data).astype(float))
        return transform_tensor(hp, col)

    def state(self) -> dict:
        return {"lam": self.lam.data.copy(), "log_sigma": self.log_sigma.data.copy()}


def discrete_preimage(hp: HyperParam, value) -> float:
    """An unconstrained value whose discretized image is ``value`` (range midpoint)."""
    value = int(value)
    if not hp.lo <= value <= hp.hi:
        raise ValueError(f"{hp.name}: value {value} outside [{hp.lo}, {hp.hi}]")
    span = hp.hi - hp.lo
    if span == 0:
        return 0.0
    p = (value - hp.lo) / span
    p = min(max(p, 0.25 / span), 1.0 - 0.25 / span)
    return math.log(p) - math.log1p(-p)


def sample_perturbed(space: HyperSpace, batch: int, rng: np.random.Generator,
                     perturb: bool = True) -> Tensor:
    """Draw a (batch, n) matrix of ``lam + sigma * z``, differentiable in lam and log_sigma.

    Columns whose hyperparameter is not per-example share one draw across the batch.
    """
    n = space.n
    if n == 0:
        return Tensor(np.zeros((batch, 0)))
    z = rng.standard_normal((batch, n))
    for j, hp in enumerate(space.params):
        if not hp.per_example:
            z[:, j] = z[0, j]
    base = reshape(space.lam, (1, n))
    if not perturb:
        return base + Tensor(np.zeros((batch, n)))
    return base + exp(reshape(space.log_sigma, (1, n))) * Tensor(z)


def entropy(space: HyperSpace) -> Tensor:
    """Entropy of the factorized Gaussian perturbation, sum_j (0.5 log(2 pi e) + log sigma_j)."""
    return space.log_sigma.sum() + space.n * GAUSSIAN_ENTROPY_CONST


def constrained_snapshot(space: HyperSpace) -> dict:
    return {hp.name: apply_transform(hp, space.lam.data[j]) for j, hp in enumerate(space.params)}


def deterministic_batch(space: HyperSpace, batch: int) -> Tensor:
    """Unperturbed hyperparameters repeated over a batch, as a constant tensor."""
    return Tensor(np.tile(space.lam.data, (batch, 1)))


__all__ = [
    "HyperParam", "HyperSpace", "apply_transform", "inverse_transform", "transform_tensor",
    "sample_perturbed", "entropy", "constrained_snapshot", "deterministic_batch",
    "discrete_preimage", "LOG_SIGMA_FLOOR", "LOG_SIGMA_CEIL",
]
