"""Dense float64 tensors with a define-by-run reverse-mode tape.

Every differentiable op appends one node to the module-level tape when any of
its inputs requires a gradient. ``backward`` walks the tape once in reverse,
writes ``grad`` on the leaves that asked for one, and clears the tape.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    active: bool = True

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()


_TAPE = Tape()


def get_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Suspend recording; ops inside produce constant tensors."""
    prev = _TAPE.active
    _TAPE.active = False
    try:
        yield
    finally:
        _TAPE.active = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape_node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", other, self)

    def __neg__(self):
        return elementwise("neg", self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return reduce("sum", self, axis)

    def mean(self, axis=None):
        return reduce("mean", self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    out = Tensor(out_data)
    if _TAPE.active and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, tuple(inputs), out, backward)
        out.tape_node = node
        _TAPE.record(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


UNARY = ("exp", "log", "sigmoid", "relu", "square", "neg", "tanh")
BINARY = ("add", "sub", "mul", "div")


def elementwise(op_kind: str, a, b=None) -> Tensor:
    a = as_tensor(a)
    if op_kind in BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        b = as_tensor(b)
        _broadcast_shape(a, b)
        ad, bd = a.data, b.data
        if op_kind == "add":
            out = ad + bd
            rule = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
        elif op_kind == "sub":
            out = ad - bd
            rule = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
        elif op_kind == "mul":
            out = ad * bd
            rule = lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape))
        else:
            out = ad / bd
            rule = lambda g: (
                _unbroadcast(g / bd, a.shape),
                _unbroadcast(-g * ad / (bd * bd), b.shape),
            )
        return _record(op_kind, (a, b), out, rule)

    if op_kind not in UNARY:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    x = a.data
    if op_kind == "exp":
        out = np.exp(x)
        rule = lambda g: (g * out,)
    elif op_kind == "log":
        if np.any(x <= 0):
            raise DomainError("log of non-positive entries")
        out = np.log(x)
        rule = lambda g: (g / x,)
    elif op_kind == "sigmoid":
        out = _sigmoid(x)
        rule = lambda g: (g * out * (1.0 - out),)
    elif op_kind == "tanh":
        out = np.tanh(x)
        rule = lambda g: (g * (1.0 - out * out),)
    elif op_kind == "relu":
        out = np.maximum(x, 0.0)
        rule = lambda g: (g * (x > 0),)
    elif op_kind == "square":
        out = x * x
        rule = lambda g: (2.0 * g * x,)
    else:
        out = -x
        rule = lambda g: (-g,)
    return _record(op_kind, (a,), out, rule)


def exp(a) -> Tensor:
    return elementwise("exp", a)


def log(a) -> Tensor:
    return elementwise("log", a)


def sigmoid(a) -> Tensor:
    return elementwise("sigmoid", a)


def relu(a) -> Tensor:
    return elementwise("relu", a)


def tanh(a) -> Tensor:
    return elementwise("tanh", a)


def square(a) -> Tensor:
    return elementwise("square", a)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def _normalize_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"invalid axis {ax} for tensor of rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise ValueError(f"repeated axis in {axes}")
    return tuple(sorted(out))


def reduce(op_kind: str, a, axes=None) -> Tensor:
    a = as_tensor(a)
    if op_kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {op_kind!r}")
    axes = _normalize_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.sum(axis=axes)
    if op_kind == "mean":
        out = out / count
    scale = 1.0 / count if op_kind == "mean" else 1.0
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def rule(g):
        return (np.broadcast_to(g.reshape(kept) * scale, a.shape).copy(),)

    return _record(op_kind, (a,), np.asarray(out), rule)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _record("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def take(a, index) -> Tensor:
    """Basic or integer-array indexing with scatter-add backward."""
    a = as_tensor(a)

    def rule(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _record("take", (a,), np.array(a.data[index]), rule)


def stack_columns(cols: Sequence) -> Tensor:
    """Stack 1-D tensors of equal length as the columns of a matrix."""
    cols = [as_tensor(c) for c in cols]
    lengths = {c.shape for c in cols}
    if len(lengths) != 1 or cols[0].ndim != 1:
        raise ShapeError(f"stack_columns needs equal 1-D tensors, got {sorted(lengths)}")
    out = np.stack([c.data for c in cols], axis=1)
    return _record("stack", tuple(cols), out, lambda g: tuple(g[:, j] for j in range(len(cols))))


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (B x K) against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    out = np.mean(lse - z[rows, labels])

    def rule(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / len(labels),)

    return _record("cross_entropy", (logits,), np.asarray(out), rule)


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D cross-correlation, NCHW input and OIKK kernel, no bias."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Cw, K, K2 = w.shape
    if Cw != C:
        raise ShapeError(f"input channels {C} do not match kernel channels {Cw}")
    if K != K2:
        raise ShapeError(f"kernel must be square, got {K}x{K2}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if K > Hp or K > Wp:
        raise ShapeError(f"kernel {K}x{K} larger than padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - K) // stride + 1, (Wp - K) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    wd = w.data

    def window(i, j):
        return (slice(None), slice(None),
                slice(i, i + stride * (Ho - 1) + 1, stride),
                slice(j, j + stride * (Wo - 1) + 1, stride))

    out = np.zeros((B, O, Ho, Wo))
    for i in range(K):
        for j in range(K):
            patch = xp[window(i, j)]
            out += np.einsum("bchw,oc->bohw", patch, wd[:, :, i, j])

    def rule(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for i in range(K):
            for j in range(K):
                sl = window(i, j)
                gw[:, :, i, j] = np.einsum("bohw,bchw->oc", g, xp[sl])
                gxp[sl] += np.einsum("bohw,oc->bchw", g, wd[:, :, i, j])
        gx = gxp[:, :, padding:padding + H, padding:padding + W]
        return (gx, gw)

    return _record("conv2d", (x, w), out, rule)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _TAPE
    try:
        if not loss.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        leaves: dict[int, Tensor] = {}
        if loss.tape_node is None:
            leaves[id(loss)] = loss
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.tape_node is None:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            if key in grads:
                leaf.grad = np.asarray(grads[key], dtype=np.float64).reshape(leaf.shape)
    finally:
        tape.clear()


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest per-leaf relative error between backward and central differences.

    ``f`` must rebuild its graph from ``leaves`` on each call and be
    deterministic. The error for a leaf is ``|analytic - numeric| /
    (|numeric| + 1e-8)`` measured in the Euclidean norm over its entries.
    """
    _TAPE.clear()
    zero_grad(leaves)
    loss = f()
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in leaves]
    worst = 0.0
    with no_grad():
        for p, ga in zip(leaves, analytic):
            gn = np.zeros(p.shape)
            flat = p.data.reshape(-1)
            gflat = gn.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = f().item()
                flat[k] = orig - h
                down = f().item()
                flat[k] = orig
                gflat[k] = (up - down) / (2.0 * h)
            err = np.linalg.norm(ga - gn) / (np.linalg.norm(gn) + 1e-8)
            worst = max(worst, float(err))
    return worst
