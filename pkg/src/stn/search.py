"""Grid and random search baselines: every trial is an ordinary fixed-hyperparameter run."""

from __future__ import annotations

import csv
import io
import itertools
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .hyperspace import HyperParam, HyperSpace
from .trainer import TrainConfig, fit_fixed

DEFAULT_GRID_CAP = 4096
_BLAS_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


@dataclass
class TrialSpec:
    assignment: dict
    seed: int
    budget: int

    def validate(self, params: list[HyperParam]) -> None:
        missing = {p.name for p in params} - set(self.assignment)
        if missing:
            raise KeyError(f"trial assignment is missing {sorted(missing)}")
        for p in params:
            v = self.assignment[p.name]
            lo, hi = p.bounds
            if not lo <= v <= hi:
                raise ValueError(f"{p.name}={v} outside [{lo}, {hi}]")


@dataclass
class TrialRecord:
    spec: TrialSpec
    valid_loss: float
    test_loss: float | None
    seconds: float
    epoch_valid: list[float] = field(default_factory=list)


@dataclass
class SearchResult:
    names: list[str]
    trials: list[TrialRecord]

    @property
    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate([t.valid_loss for t in self.trials])

    def best(self) -> TrialRecord:
        return min(self.trials, key=lambda t: t.valid_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", *self.names, "val_loss", "test_loss", "seconds"])
        for i, t in enumerate(self.trials):
            test = "" if t.test_loss is None else repr(float(t.test_loss))
            w.writerow([i, *(t.spec.assignment[n] for n in self.names),
                        repr(float(t.valid_loss)), test, repr(float(t.seconds))])
        return buf.getvalue()


def axis_values(hp: HyperParam, points: int) -> list:
    """Grid coordinates for one hyperparameter.

    Positive (exp) hyperparameters are spaced geometrically, bounded ones
    linearly over the open interval, discrete ones over the distinct integers.
    """
    if points < 1:
        raise ValueError("points per axis must be at least 1")
    lo, hi = hp.lo, hp.hi
    if lo == hi:
        return [int(lo) if hp.discrete else float(lo)]
    if hp.kind == "exp_positive":
        if lo <= 0:
            raise ValueError(f"{hp.name}: geometric grid needs lo > 0")
        return [float(v) for v in np.geomspace(lo, hi, points)]
    if hp.kind == "sigmoid_bounded":
        # the endpoints are not reachable through the sigmoid
        return [float(v) for v in np.linspace(lo, hi, points + 2)[1:-1]]
    if hp.discrete:
        return sorted({int(v) for v in np.round(np.linspace(lo, hi, points))})
    return [float(v) for v in np.linspace(lo, hi, points)]


def grid_specs(params: list[HyperParam], points, seed: int, budget: int,
               cap: int = DEFAULT_GRID_CAP) -> list[TrialSpec]:
    """Lexicographic grid: the last hyperparameter varies fastest."""
    per_axis = points if isinstance(points, (list, tuple)) else [points] * len(params)
    axes = [axis_values(p, k) for p, k in zip(params, per_axis)]
    size = math.prod(len(a) for a in axes)
    if size > cap:
        raise ValueError(f"grid has {size} points, above the cap of {cap}")
    return [TrialSpec({p.name: v for p, v in zip(params, combo)}, seed, budget)
            for combo in itertools.product(*axes)]


def random_specs(params: list[HyperParam], n_trials: int, rng: np.random.Generator,
                 seed: int, budget: int) -> list[TrialSpec]:
    """Uniform over each constrained range (log-uniform for positive kinds, integers if discrete)."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    specs = []
    for _ in range(n_trials):
        assignment = {}
        for p in params:
            if p.discrete:
                assignment[p.name] = int(rng.integers(int(p.lo), int(p.hi) + 1))
            elif p.kind == "exp_positive":
                if p.lo <= 0:
                    raise ValueError(f"{p.name}: log-uniform sampling needs lo > 0")
                assignment[p.name] = float(math.exp(rng.uniform(math.log(p.lo), math.log(p.hi))))
            elif p.kind == "sigmoid_bounded" and p.lo < p.hi:
                v = rng.uniform(p.lo, p.hi)
                while v == p.lo:
                    v = rng.uniform(p.lo, p.hi)
                assignment[p.name] = float(v)
            else:
                assignment[p.name] = float(rng.uniform(p.lo, p.hi))
        specs.append(TrialSpec(assignment, seed, budget))
    return specs


def run_trial(spec: TrialSpec, params: list[HyperParam], build, cfg: TrainConfig, data) -> TrialRecord:
    """Train one fixed-hyperparameter model; ``build(space, seed)`` returns a fresh model."""
    spec.validate(params)
    t0 = time.perf_counter()
    space = HyperSpace(params, init=spec.assignment)
    model = build(space, spec.seed)
    trial_cfg = replace(cfg, max_epochs=spec.budget, seed=spec.seed)
    res = fit_fixed(model, space, data.train, data.valid, trial_cfg, test=data.test)
    return TrialRecord(spec, res.final["valid_loss"], res.final.get("test_loss"),
                       time.perf_counter() - t0, [m["valid_loss"] for m in res.metrics])


def _run_all(specs, params, build, cfg, data, workers: int) -> list[TrialRecord]:
    if workers <= 1:
        return [run_trial(s, params, build, cfg, data) for s in specs]
    n = len(specs)
    # fresh interpreters with single-threaded BLAS so workers do not oversubscribe the cores
    saved = {k: os.environ.get(k) for k in _BLAS_THREAD_VARS}
    os.environ.update({k: "1" for k in _BLAS_THREAD_VARS})
    try:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            return list(pool.map(run_trial, specs, [params] * n, [build] * n, [cfg] * n, [data] * n))
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v


def grid_search(params: list[HyperParam], points, cfg: TrainConfig, data, build,
                workers: int = 1, cap: int = DEFAULT_GRID_CAP) -> SearchResult:
    specs = grid_specs(params, points, cfg.seed, cfg.max_epochs, cap)
    return SearchResult([p.name for p in params], _run_all(specs, params, build, cfg, data, workers))


def random_search(params: list[HyperParam], n_trials: int, cfg: TrainConfig, data, build,
                  rng: np.random.Generator, workers: int = 1) -> SearchResult:
    specs = random_specs(params, n_trials, rng, cfg.seed, cfg.max_epochs)
    return SearchResult([p.name for p in params], _run_all(specs, params, build, cfg, data, workers))


def greedy_schedule_from_grid(trials) -> dict[int, dict]:
    """Per-epoch assignment with the lowest validation loss (epochs numbered from 1).

    ``trials`` is a SearchResult, TrialRecords, or ``(assignment, losses)``
    pairs. Ties go to the smaller constrained value.
    """
    if isinstance(trials, SearchResult):
        trials = trials.trials
    pairs = [(t.spec.assignment, t.epoch_valid) if isinstance(t, TrialRecord) else t for t in trials]
    if not pairs:
        raise ValueError("no trials")
    lengths = {len(losses) for _, losses in pairs}
    if len(lengths) != 1:
        raise ValueError(f"ragged per-epoch logs: lengths {sorted(lengths)}")
    schedule = {}
    for e in range(lengths.pop()):
        assignment, _ = min(pairs, key=lambda p: (p[1][e], tuple(p[0].values())))
        schedule[e + 1] = dict(assignment)
    return schedule
