"""SGD with momentum and Adam over lists of tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerSpec:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerSpec":
        return cls(**d)


@dataclass
class OptimizerState:
    step: int = 0
    buffers: dict = field(default_factory=dict)


def optimizer_update(spec: OptimizerSpec, params, grads, state: OptimizerState) -> None:
    """Apply one in-place update; parameters with a ``None`` gradient are skipped."""
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if spec.kind == "sgd":
            if spec.momentum:
                buf = state.buffers.get(i)
                buf = g.copy() if buf is None else spec.momentum * buf + g
                state.buffers[i] = buf
                g = buf
            p.data -= spec.lr * g
        else:
            m, v = state.buffers.get(i, (np.zeros(p.shape), np.zeros(p.shape)))
            m = spec.beta1 * m + (1.0 - spec.beta1) * g
            v = spec.beta2 * v + (1.0 - spec.beta2) * g * g
            state.buffers[i] = (m, v)
            m_hat = m / (1.0 - spec.beta1 ** t)
            v_hat = v / (1.0 - spec.beta2 ** t)
            p.data -= spec.lr * m_hat / (np.sqrt(v_hat) + spec.eps)


class Optimizer:
    """Binds a spec, a parameter list and its state."""

    def __init__(self, params: list[Tensor], spec: OptimizerSpec):
        self.params = list(params)
        self.spec = spec
        self.state = OptimizerState()

    def step(self, grads=None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        optimizer_update(self.spec, self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(grads, max_norm: float):
    """Rescale ``grads`` so their global norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None)))
    if total <= max_norm or total == 0.0:
        return list(grads), total
    scale = max_norm / total
    return [None if g is None else g * scale for g in grads], total
