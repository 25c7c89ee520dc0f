"""Alternating best-response / hyperparameter optimization, plus the fixed-distribution fit.

``stn_fit`` alternates ``T_train`` steps on the best-response parameters with
``T_valid`` steps on the hyperparameters and their perturbation scales. Each
phase backpropagates through the whole graph but only applies the update for
its own parameter group.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import BatchStream, Split
from .hyperspace import (
    HyperSpace,
    apply_transform,
    deterministic_batch,
    entropy,
    sample_perturbed,
)
from .optim import Optimizer, OptimizerSpec, clip_grad_norm
from .tensor import Tensor, backward, get_tape, zero_grad

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    def __init__(self, record: dict):
        self.record = record
        super().__init__(f"non-finite {record.get('phase')} loss at step {record.get('step')}: {record}")


@dataclass
class TrainConfig:
    T_train: int = 2
    T_valid: int = 1
    warmup_epochs: int = 0
    optimizer_elem: OptimizerSpec = field(default_factory=lambda: OptimizerSpec("adam", 1e-3))
    optimizer_hyper: OptimizerSpec = field(default_factory=lambda: OptimizerSpec("adam", 3e-3))
    optimizer_scale: OptimizerSpec = field(default_factory=lambda: OptimizerSpec("adam", 3e-3))
    batch_size: int = 32
    valid_batch_size: int | None = None
    max_epochs: int = 10
    steps_per_epoch: int | None = None
    grad_clip: float | None = None
    seed: int = 0
    fixed_scale_mode: bool = False
    patience: int | None = None

    def __post_init__(self):
        for name in ("optimizer_elem", "optimizer_hyper", "optimizer_scale"):
            spec = getattr(self, name)
            if isinstance(spec, dict):
                setattr(self, name, OptimizerSpec.from_dict(spec))
        if self.T_train < 1 or self.T_valid < 1:
            raise ValueError("T_train and T_valid must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("batch_size must be positive and epoch counts non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class ScheduleLog:
    """One row per alternation cycle: raw, constrained and scale per hyperparameter."""

    def __init__(self, names: list[str]):
        self.names = list(names)
        self.rows: list[dict] = []

    @property
    def columns(self) -> list[str]:
        cols = ["step", "epoch"]
        for n in self.names:
            cols += [f"{n}_raw", f"{n}_constrained", f"{n}_sigma"]
        return cols + ["train_loss", "valid_obj"]

    def record(self, step: int, epoch: int, space: HyperSpace, train_loss: float, valid_obj: float):
        if self.rows and step <= self.rows[-1]["step"]:
            raise ValueError("schedule steps must be strictly increasing")
        row = {"step": int(step), "epoch": int(epoch)}
        sig = space.sigma
        for j, hp in enumerate(space.params):
            raw = float(space.lam.data[j])
            row[f"{hp.name}_raw"] = raw
            row[f"{hp.name}_constrained"] = apply_transform(hp, raw)
            row[f"{hp.name}_sigma"] = float(sig[j])
        row["train_loss"] = float(train_loss)
        row["valid_obj"] = float(valid_obj)
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.columns])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScheduleLog":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header[:2] != ["step", "epoch"] or header[-2:] != ["train_loss", "valid_obj"]:
            raise ValueError(f"not a schedule log header: {header}")
        names = [h[:-4] for h in header[2:-2] if h.endswith("_raw")]
        out = cls(names)
        for line in reader:
            row = {}
            for key, val in zip(header, line):
                num = float(val)
                row[key] = int(num) if key in ("step", "epoch") or (
                    key.endswith("_constrained") and "." not in val and "e" not in val) else num
            out.rows.append(row)
        return out


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class FitResult:
    schedule: ScheduleLog
    metrics: list[dict]
    final: dict


def _check_finite(value: float, phase: str, step: int, space: HyperSpace) -> None:
    if not np.isfinite(value):
        raise NonFiniteLossError({"phase": phase, "step": step, "value": value,
                                  "lam": space.lam.data.tolist(),
                                  "sigma": space.sigma.tolist()})


def _batch_len(batch, default: int) -> int:
    return default if batch is None else len(batch)


def train_step(model, space: HyperSpace, batch, opt: Optimizer, rng: np.random.Generator,
               cfg: TrainConfig, perturb: bool = True, step: int = 0) -> float:
    """One best-response update on a training batch; hyperparameter gradients are not applied.

    The hyperparameter gradients from this step stay readable on
    ``space.lam.grad`` until the next step clears them.
    """
    get_tape().clear()
    params = model.parameters()
    zero_grad(params + [space.lam, space.log_sigma])
    lam = sample_perturbed(space, _batch_len(batch, cfg.batch_size), rng, perturb=perturb)
    loss = model.train_loss(batch, lam, rng)
    value = loss.item()
    _check_finite(value, "train", step, space)
    backward(loss)
    grads = [p.grad for p in params]
    if cfg.grad_clip is not None:
        grads, _ = clip_grad_norm(grads, cfg.grad_clip)
    opt.step(grads)
    return value


def valid_step(model, space: HyperSpace, batch, opt_hyper: Optimizer, opt_scale: Optimizer,
               rng: np.random.Generator, cfg: TrainConfig, step: int = 0) -> float:
    """One update of lam (and log_sigma unless the scale is fixed) on a validation batch."""
    get_tape().clear()
    params = model.parameters()
    zero_grad(params + [space.lam, space.log_sigma])
    lam = sample_perturbed(space, _batch_len(batch, cfg.valid_batch_size or cfg.batch_size), rng)
    obj = model.valid_loss(batch, lam, rng)
    if not cfg.fixed_scale_mode:
        obj = obj - space.tau * entropy(space)
    value = obj.item()
    _check_finite(value, "valid", step, space)
    backward(obj)
    opt_hyper.step([space.lam.grad])
    if not cfg.fixed_scale_mode:
        opt_scale.step([space.log_sigma.grad])
        space.clamp_scales()
    zero_grad(params)
    return value


def _evaluate(model, split) -> float | None:
    if split is None and not hasattr(model, "problem"):
        return None
    return float(model.evaluate(split))


def stn_fit(model, space: HyperSpace, train: Split | None, valid: Split | None,
            cfg: TrainConfig, test: Split | None = None, callback=None) -> FitResult:
    """Run the alternating schedule for ``cfg.max_epochs`` epochs (or until patience runs out).

    ``callback(event, info)`` is invoked with ``"train"``, ``"valid"`` and
    ``"epoch"`` events; it may inspect but must not mutate the run.
    """
    if train is not None and (len(train) == 0 or valid is None or len(valid) == 0):
        raise ValueError("training and validation splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    data_rng, noise_rng = rng.spawn(2)
    opt_elem = Optimizer(model.parameters(), cfg.optimizer_elem)
    opt_hyper = Optimizer([space.lam], cfg.optimizer_hyper)
    opt_scale = Optimizer([space.log_sigma], cfg.optimizer_scale)
    train_stream = BatchStream(train, cfg.batch_size, data_rng, cfg.steps_per_epoch)
    valid_stream = BatchStream(valid, cfg.valid_batch_size or cfg.batch_size, data_rng)
    schedule = ScheduleLog(space.names)
    metrics: list[dict] = []
    step = 0
    best, stale = np.inf, 0
    t_start = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        warm = epoch <= cfg.warmup_epochs or space.n == 0
        epoch_losses = []
        done = 0
        while done < train_stream.batches_per_epoch:
            cycle = []
            for _ in range(min(cfg.T_train, train_stream.batches_per_epoch - done)):
                step += 1
                loss = train_step(model, space, train_stream.next(), opt_elem, noise_rng, cfg, step=step)
                cycle.append(loss)
                done += 1
                if callback:
                    callback("train", {"step": step, "epoch": epoch, "loss": loss, "space": space})
            epoch_losses += cycle
            if warm:
                continue
            vals = []
            for _ in range(cfg.T_valid):
                step += 1
                vals.append(valid_step(model, space, valid_stream.next(), opt_hyper, opt_scale,
                                       noise_rng, cfg, step=step))
                if callback:
                    callback("valid", {"step": step, "epoch": epoch, "obj": vals[-1], "space": space})
            schedule.record(step, epoch, space, float(np.mean(cycle)), float(np.mean(vals)))
        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
               "valid_loss": _evaluate(model, valid), "test_loss": _evaluate(model, test),
               "wall_seconds": time.perf_counter() - t0}
        metrics.append(row)
        log.info("epoch %d train %.4f valid %s", epoch, row["train_loss"], row["valid_loss"])
        if callback:
            callback("epoch", dict(row, space=space))
        if cfg.patience is not None and row["valid_loss"] is not None:
            if row["valid_loss"] < best:
                best, stale = row["valid_loss"], 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    final = dict(metrics[-1]) if metrics else {}
    final["wall_seconds_total"] = time.perf_counter() - t_start
    final["steps"] = step
    return FitResult(schedule, metrics, final)


@dataclass
class LambdaDistribution:
    """Fixed sampling distribution over unconstrained hyperparameters."""

    kind: str
    low: np.ndarray | float = 0.0
    high: np.ndarray | float = 1.0
    mean: np.ndarray | float = 0.0
    std: np.ndarray | float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "point"):
            raise ValueError(f"unknown lambda distribution {self.kind!r}")

    def sample(self, batch: int, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=(batch, n))
        if self.kind == "gaussian":
            return np.asarray(self.mean) + np.asarray(self.std) * rng.standard_normal((batch, n))
        return np.broadcast_to(np.asarray(self.mean, dtype=float), (batch, n)).copy()


def global_fit(model, space: HyperSpace, dist: LambdaDistribution, train: Split | None,
               cfg: TrainConfig, lr_decay: float = 1.0) -> list[float]:
    """Fit the best-response parameters to E_{lam ~ dist} f(lam, theta_hat(lam)); lam is untouched.

    Returns the per-epoch mean training loss. ``lr_decay`` multiplies the
    learning rate after every epoch.
    """
    rng = np.random.default_rng(cfg.seed)
    data_rng, noise_rng = rng.spawn(2)
    spec = OptimizerSpec(**asdict(cfg.optimizer_elem))
    opt = Optimizer(model.parameters(), spec)
    stream = BatchStream(train, cfg.batch_size, data_rng, cfg.steps_per_epoch)
    history = []
    step = 0
    for epoch in range(cfg.max_epochs):
        losses = []
        for _ in range(stream.batches_per_epoch):
            step += 1
            batch = stream.next()
            get_tape().clear()
            zero_grad(model.parameters())
            lam = Tensor(dist.sample(_batch_len(batch, cfg.batch_size), space.n, noise_rng))
            loss = model.train_loss(batch, lam, noise_rng)
            value = loss.item()
            _check_finite(value, "global", step, space)
            backward(loss)
            grads = [p.grad for p in opt.params]
            if cfg.grad_clip is not None:
                grads, _ = clip_grad_norm(grads, cfg.grad_clip)
            opt.step(grads)
            losses.append(value)
        history.append(float(np.mean(losses)))
        spec.lr *= lr_decay
    return history


def fit_fixed(model, space: HyperSpace, train: Split | None, valid: Split | None, cfg: TrainConfig,
              test: Split | None = None, schedule: dict | None = None) -> FitResult:
    """Ordinary training at the deterministic hyperparameters (no perturbation, no valid steps).

    ``schedule`` maps an epoch number to ``{name: constrained value}`` and is
    applied at the start of that epoch.
    """
    if train is not None and (len(train) == 0 or valid is None or len(valid) == 0):
        raise ValueError("training and validation splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    data_rng, noise_rng = rng.spawn(2)
    opt = Optimizer(model.parameters(), cfg.optimizer_elem)
    stream = BatchStream(train, cfg.batch_size, data_rng, cfg.steps_per_epoch)
    log_ = ScheduleLog(space.names)
    metrics = []
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        if schedule and epoch in schedule:
            for name, value in schedule[epoch].items():
                space.set_constrained(name, value)
        losses = []
        for _ in range(stream.batches_per_epoch):
            step += 1
            losses.append(train_step(model, space, stream.next(), opt, noise_rng, cfg,
                                     perturb=False, step=step))
        val = _evaluate(model, valid)
        log_.record(step, epoch, space, float(np.mean(losses)), val)
        metrics.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "valid_loss": val,
                        "test_loss": _evaluate(model, test),
                        "wall_seconds": time.perf_counter() - t0})
    return FitResult(log_, metrics, dict(metrics[-1]) if metrics else {})


__all__ = [
    "TrainConfig", "ScheduleLog", "FitResult", "NonFiniteLossError", "train_step",
    "valid_step", "stn_fit", "global_fit", "fit_fixed", "LambdaDistribution",
    "deterministic_batch",
]
