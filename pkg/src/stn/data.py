"""Synthetic datasets and batch streaming."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx) -> "Split":
        return Split(self.x[idx], self.y[idx])


@dataclass
class SyntheticDataset:
    train: Split
    valid: Split
    test: Split | None
    generator: str
    seed: int
    spectrum: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def split_sizes(self) -> tuple:
        return (len(self.train), len(self.valid), 0 if self.test is None else len(self.test))


def _orthonormal(rng, rows, cols) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def make_regression(D: int, N: int, spectrum, noise_std: float = 0.0, seed: int = 0,
                    n_valid: int = 200, n_test: int = 200) -> SyntheticDataset:
    """Training design matrix with singular values ``spectrum``; t = X w_true + noise."""
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.shape != (D,) or np.any(spectrum <= 0):
        raise ValueError(f"spectrum must hold {D} positive values, got {spectrum}")
    if N < D:
        raise ValueError(f"need N >= D, got N={N}, D={D}")
    rng = np.random.default_rng(seed)
    U = _orthonormal(rng, N, D)
    V = _orthonormal(rng, D, D)
    X = (U * spectrum) @ V.T
    w_true = rng.standard_normal(D)

    def targets(x):
        return x @ w_true + noise_std * rng.standard_normal(len(x))

    def fresh(n):
        # same second moments as the training rows
        x = (rng.standard_normal((n, D)) * (spectrum / math.sqrt(N))) @ V.T
        return Split(x, targets(x))

    train = Split(X, targets(X))
    return SyntheticDataset(train, fresh(n_valid), fresh(n_test), "regression", seed,
                            spectrum=spectrum, meta={"w_true": w_true})


def _flip(y: np.ndarray, n_classes: int, noise: float, rng) -> np.ndarray:
    y = y.copy()
    k = int(round(noise * len(y)))
    idx = rng.choice(len(y), size=k, replace=False)
    y[idx] = (y[idx] + rng.integers(1, n_classes, size=k)) % n_classes
    return y


def make_classification(D: int, N: int, n_classes: int = 2, label_noise: float = 0.0,
                        seed: int = 0, n_valid: int = 1000, n_test: int = 1000,
                        separation: float = 3.0) -> SyntheticDataset:
    """Gaussian class blobs with a fixed fraction of labels flipped in every split."""
    if not 0.0 <= label_noise < 0.5:
        raise ValueError("label_noise must lie in [0, 0.5)")
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_classes, D))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n):
        y = rng.permutation(np.arange(n) % n_classes)
        x = means[y] + rng.standard_normal((n, D))
        return Split(x, _flip(y, n_classes, label_noise, rng))

    return SyntheticDataset(draw(N), draw(n_valid), draw(n_test), "classification", seed,
                            meta={"means": means, "label_noise": label_noise})


def _bar(side, rng):
    img = np.zeros((side, side))
    width = rng.integers(1, 3)
    pos = rng.integers(0, side - width + 1)
    if rng.random() < 0.5:
        img[pos:pos + width, :] = 1.0
    else:
        img[:, pos:pos + width] = 1.0
    return img


def _blob(side, rng):
    yy, xx = np.mgrid[0:side, 0:side]
    cy, cx = rng.uniform(side * 0.25, side * 0.75, size=2)
    r = rng.uniform(side * 0.12, side * 0.22)
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))


def make_tiny_images(side: int = 8, N: int = 200, seed: int = 0, n_valid: int = 200,
                     n_test: int = 200, noise: float = 0.15) -> SyntheticDataset:
    """Single-channel bars (label 0) versus blobs (label 1), pixels in [0, 1]."""
    if side > 16 or side < 3:
        raise ValueError("side must lie in [3, 16]")
    rng = np.random.default_rng(seed)

    def draw(n):
        y = rng.permutation(np.arange(n) % 2)
        imgs = np.stack([_bar(side, rng) if c == 0 else _blob(side, rng) for c in y])
        imgs = np.clip(imgs + noise * rng.standard_normal(imgs.shape), 0.0, 1.0)
        return Split(imgs[:, None, :, :], y)

    return SyntheticDataset(draw(N), draw(n_valid), draw(n_test), "tiny_images", seed)


class BatchStream:
    """Endless mini-batches over a split, reshuffled at the start of every pass.

    ``split=None`` streams ``None`` batches for data-free objectives.
    """

    def __init__(self, split: Split | None, batch_size: int, rng: np.random.Generator,
                 steps_per_epoch: int | None = None):
        self.split = split
        self.batch_size = batch_size
        self.rng = rng
        if split is None:
            self.batches_per_epoch = steps_per_epoch or 1
        else:
            if len(split) == 0:
                raise ValueError("empty dataset")
            self.batches_per_epoch = math.ceil(len(split) / batch_size)
        self._order = None
        self._pos = 0

    def next(self):
        if self.split is None:
            return None
        if self._order is None or self._pos >= len(self._order):
            self._order = self.rng.permutation(len(self.split))
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.split.subset(idx)
