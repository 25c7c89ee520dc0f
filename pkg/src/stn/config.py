"""Experiment configuration: JSON ingestion, validation and object construction.

A config is a JSON object with ``task`` and ``seed`` plus the sections
``data``, ``model``, ``hyperparameters``, ``trainer``, ``search`` and
``output``. Validation runs before any training and reports the offending key
path.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import SyntheticDataset, make_classification, make_regression, make_tiny_images
from .hyperspace import DEFAULT_TAU, KINDS, HyperParam, HyperSpace
from .models import ConvClassifier, GatedRidgeModel, MLPClassifier, MLPRegressor, QuadraticModel
from .oracles import QuadraticBilevel, RidgeProblem, gated_response_params
from .optim import OptimizerSpec
from .regularizers import RegularizerBinding
from .trainer import TrainConfig

TASKS = ("quad_oracle", "linear_jacobian", "synthetic_regression", "synthetic_classification",
         "tiny_images")
SECTIONS = ("task", "seed", "data", "model", "hyperparameters", "trainer", "search", "output")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


@dataclass
class ExperimentConfig:
    task: str
    seed: int
    data: dict
    model: dict
    hyperparameters: list
    trainer: dict
    search: dict
    output: dict

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}


def load_config(source) -> ExperimentConfig:
    """Parse and validate a config from a path, JSON string or dict."""
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    _require(isinstance(raw, dict), "<root>", "config must be a JSON object")
    for key in raw:
        _require(key in SECTIONS, key, f"unknown section; expected one of {SECTIONS}")
    _require("task" in raw, "task", "missing")
    _require(raw["task"] in TASKS, "task", f"unknown task {raw['task']!r}; expected one of {TASKS}")
    _require(isinstance(raw.get("seed", 0), int), "seed", "must be an integer")
    cfg = ExperimentConfig(
        task=raw["task"], seed=raw.get("seed", 0), data=raw.get("data", {}),
        model=raw.get("model", {}), hyperparameters=raw.get("hyperparameters", []),
        trainer=raw.get("trainer", {}), search=raw.get("search", {}), output=raw.get("output", {}))
    validate(cfg)
    return cfg


def _hyperparam(entry, path: str) -> HyperParam:
    _require(isinstance(entry, dict), path, "must be an object")
    allowed = {"name", "kind", "lo", "hi", "init", "per_example", "sigma"}
    for key in entry:
        _require(key in allowed, f"{path}.{key}", "unknown key")
    _require("name" in entry, f"{path}.name", "missing")
    _require(entry.get("kind", "identity") in KINDS, f"{path}.kind", f"expected one of {KINDS}")
    try:
        return HyperParam(entry["name"], entry.get("kind", "identity"), entry.get("lo", 0.0),
                          entry.get("hi", 1.0), entry.get("per_example", True))
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def validate(cfg: ExperimentConfig) -> None:
    _require(isinstance(cfg.hyperparameters, list), "hyperparameters", "must be a list")
    params = [_hyperparam(h, f"hyperparameters[{i}]") for i, h in enumerate(cfg.hyperparameters)]
    try:
        space = build_space(cfg, params)
    except (ValueError, KeyError) as exc:
        raise ConfigError("hyperparameters", str(exc)) from None
    for i, b in enumerate(cfg.model.get("bindings", [])):
        path = f"model.bindings[{i}]"
        _require(isinstance(b, dict) and "kind" in b, path, "needs a 'kind'")
        for role, name in b.get("refs", {}).items():
            _require(name in space, f"{path}.refs.{role}", f"unknown hyperparameter {name!r}")
        try:
            _binding(b).validate(space)
        except (ValueError, KeyError) as exc:
            raise ConfigError(path, str(exc).strip("'\"")) from None
    try:
        trainer_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError("trainer", str(exc)) from None
    if cfg.task == "quad_oracle":
        _require(space.n == cfg.data.get("n", 2), "hyperparameters",
                 f"quad_oracle needs exactly data.n = {cfg.data.get('n', 2)} hyperparameters")
    if cfg.task == "linear_jacobian":
        _require(space.n == 1 and params[0].kind == "identity", "hyperparameters",
                 "linear_jacobian tunes one identity-kind log penalty weight")
    if cfg.task == "tiny_images":
        _require(cfg.data.get("side", 8) <= 16, "data.side", "must be at most 16")


def _binding(entry: dict) -> RegularizerBinding:
    return RegularizerBinding(entry["kind"], dict(entry.get("refs", {})), entry.get("layer", 0))


def hyperparams(cfg: ExperimentConfig) -> list[HyperParam]:
    return [_hyperparam(h, f"hyperparameters[{i}]") for i, h in enumerate(cfg.hyperparameters)]


def build_space(cfg: ExperimentConfig, params: list[HyperParam] | None = None,
                tau: float | None = None) -> HyperSpace:
    params = params or hyperparams(cfg)
    init = {h["name"]: h["init"] for h in cfg.hyperparameters if "init" in h}
    sigma = [h.get("sigma", 0.5) for h in cfg.hyperparameters]
    tau = cfg.trainer.get("tau", DEFAULT_TAU) if tau is None else tau
    return HyperSpace(params, init=init or None, sigma=sigma if sigma else 0.5, tau=tau)


def trainer_config(cfg: ExperimentConfig, **overrides) -> TrainConfig:
    opts = {k: v for k, v in cfg.trainer.items() if k != "tau"}
    for key in ("optimizer_elem", "optimizer_hyper", "optimizer_scale"):
        if key in opts:
            opts[key] = OptimizerSpec.from_dict(opts[key])
    opts.setdefault("seed", cfg.seed)
    opts.update(overrides)
    return TrainConfig(**opts)


def build_dataset(cfg: ExperimentConfig) -> SyntheticDataset | None:
    d = dict(cfg.data)
    seed = d.pop("seed", cfg.seed)
    if cfg.task == "quad_oracle":
        return None
    if cfg.task in ("linear_jacobian", "synthetic_regression"):
        D = d.pop("D", 5)
        spectrum = d.pop("spectrum", list(np.geomspace(4.0, 0.25, D)))
        return make_regression(D, d.pop("N", 200), spectrum, seed=seed, **d)
    if cfg.task == "synthetic_classification":
        return make_classification(d.pop("D", 40), d.pop("N", 80), seed=seed, **d)
    return make_tiny_images(seed=seed, **d)


@dataclass
class ModelBuilder:
    """Picklable factory ``(space, seed) -> model`` so search trials can run in worker processes."""

    cfg: ExperimentConfig
    dataset: SyntheticDataset | None
    hyper: bool = True

    def __call__(self, space: HyperSpace, seed: int):
        cfg, m = self.cfg, self.cfg.model
        rng = np.random.default_rng(seed)
        bindings = [_binding(b) for b in m.get("bindings", [])]
        if cfg.task == "quad_oracle":
            problem = QuadraticBilevel.random(cfg.data.get("n", 2), cfg.data.get("m", 3),
                                              np.random.default_rng(cfg.data.get("seed", cfg.seed)))
            return QuadraticModel(problem, space, rng, center=m.get("center"))
        train = self.dataset.train
        if cfg.task == "linear_jacobian":
            Q0, s0, _, _ = gated_response_params(RidgeProblem(train.x, train.y))
            return GatedRidgeModel(Q0, s0, space, len(train))
        common = dict(hyper=self.hyper, valid_stochastic=m.get("valid_stochastic", True))
        if cfg.task == "synthetic_regression":
            return MLPRegressor(train.x.shape[1], m.get("hidden", [16]), space, bindings, len(train), rng,
                                activation=m.get("activation", "relu"), **common)
        if cfg.task == "synthetic_classification":
            n_classes = int(train.y.max()) + 1
            return MLPClassifier(train.x.shape[1], m.get("hidden", [32]), n_classes, space, bindings,
                                 len(train), rng, activation=m.get("activation", "relu"), **common)
        return ConvClassifier(train.x.shape[-1], m.get("channels", 4), 2, space, bindings, len(train),
                              rng, kernel=m.get("kernel", 3), **common)
