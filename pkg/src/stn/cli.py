"""Command-line entry point: ``stn <subcommand> ...``.

Exit codes: 0 on success, 1 for usage or config validation errors, 2 when a
run fails at runtime.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import persist
from .config import (
    ConfigError,
    ModelBuilder,
    build_dataset,
    build_space,
    hyperparams,
    load_config,
    trainer_config,
)
from .search import grid_search, random_search
from .trainer import fit_fixed, stn_fit
from .verify import run_all

log = logging.getLogger("stn")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--workers", type=int, default=1, help="worker processes for search")
    common.add_argument("--fixed-scale", action="store_true", help="freeze sigma, drop the entropy term")
    common.add_argument("--tau", type=float, help="entropy weight")

    p = _Parser(prog="stn", description="Self-tuning networks at desk scale")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [("run-stn", "train an STN"), ("run-grid", "grid search baseline"),
                        ("run-random", "random search baseline")]:
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("config")
    sub.add_parser("verify-oracles", parents=[common], help="closed-form identity checks")
    sp = sub.add_parser("replay-schedule", parents=[common],
                        help="train a fixed model following a logged schedule")
    sp.add_argument("config")
    sp.add_argument("schedule")
    sp = sub.add_parser("export", parents=[common], help="re-read and re-emit a run's artifacts")
    sp.add_argument("run_dir")
    return p


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.tau is not None:
        if args.tau < 0:
            raise ConfigError("--tau", "must be non-negative")
        cfg.trainer["tau"] = args.tau
    if args.fixed_scale:
        cfg.trainer["fixed_scale_mode"] = True
    out = Path(args.out or cfg.output.get("dir", f"runs/{cfg.task}"))
    return cfg, out


def _run_stn(args) -> int:
    cfg, out = _load(args)
    data = build_dataset(cfg)
    space = build_space(cfg)
    model = ModelBuilder(cfg, data)(space, cfg.seed)
    tcfg = trainer_config(cfg)
    res = stn_fit(model, space, data and data.train, data and data.valid, tcfg,
                  test=data and data.test)
    tensors = dict(model.named_parameters())
    tensors.update({"hyper.lam": space.lam, "hyper.log_sigma": space.log_sigma})
    persist.save_run(out, res.schedule, res.metrics, cfg.to_dict(), tensors)
    log.info("wrote %s (%d schedule rows)", out, len(res.schedule))
    print(f"final valid_loss={res.final.get('valid_loss')} -> {out}")
    return 0


def _run_search(args, kind: str) -> int:
    cfg, out = _load(args)
    data = build_dataset(cfg)
    params = hyperparams(cfg)
    tcfg = trainer_config(cfg)
    build = ModelBuilder(cfg, data, hyper=False)
    if kind == "grid":
        result = grid_search(params, cfg.search.get("points", 10), tcfg, data, build,
                             workers=args.workers, cap=cfg.search.get("cap", 4096))
    else:
        rng = np.random.default_rng(cfg.search.get("seed", cfg.seed))
        result = random_search(params, cfg.search.get("n_trials", 10), tcfg, data, build, rng,
                               workers=args.workers)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{kind}.csv").write_text(result.to_csv())
    persist.write_config(out / persist.CONFIG_FILE, cfg.to_dict())
    best = result.best()
    print(f"{len(result.trials)} trials, best valid_loss={best.valid_loss} at {best.spec.assignment}")
    return 0


def _verify(args) -> int:
    checks = run_all(seed=args.seed or 0)
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 2


def _replay(args) -> int:
    cfg, out = _load(args)
    logged = persist.read_schedule(args.schedule)
    data = build_dataset(cfg)
    space = build_space(cfg)
    if logged.names != space.names:
        raise ConfigError("schedule", f"columns {logged.names} do not match hyperparameters {space.names}")
    schedule = {}
    for row in logged.rows:
        # the last cycle of each epoch wins
        schedule[row["epoch"]] = {n: row[f"{n}_constrained"] for n in space.names}
    model = ModelBuilder(cfg, data, hyper=False)(space, cfg.seed)
    tcfg = trainer_config(cfg)
    if schedule:
        tcfg.max_epochs = max(tcfg.max_epochs, max(schedule))
    res = fit_fixed(model, space, data and data.train, data and data.valid, tcfg,
                    test=data and data.test, schedule=schedule)
    persist.save_run(out, res.schedule, res.metrics, cfg.to_dict())
    print(f"replayed {tcfg.max_epochs} epochs, final valid_loss={res.final.get('valid_loss')} -> {out}")
    return 0


def _export(args) -> int:
    src = Path(args.run_dir)
    schedule = persist.read_schedule(src / persist.SCHEDULE_FILE)
    metrics = persist.read_metrics(src / persist.METRICS_FILE)
    dest = Path(args.out) if args.out else src / "export"
    dest.mkdir(parents=True, exist_ok=True)
    persist.write_schedule(dest / persist.SCHEDULE_FILE, schedule)
    persist.write_metrics(dest / persist.METRICS_FILE, metrics)
    if (src / persist.CHECKPOINT_FILE).exists():
        tensors = persist.read_checkpoint(src / persist.CHECKPOINT_FILE)
        print(f"checkpoint: {len(tensors)} tensors")
    print(f"exported {len(schedule)} schedule rows and {len(metrics)} epochs -> {dest}")
    return 0


COMMANDS = {
    "run-stn": _run_stn,
    "run-grid": lambda a: _run_search(a, "grid"),
    "run-random": lambda a: _run_search(a, "random"),
    "verify-oracles": _verify,
    "replay-schedule": _replay,
    "export": _export,
}


def main(argv=None) -> int:
    level = os.environ.get("STN_LOG_LEVEL", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(f"stn: error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


run_cli = main


if __name__ == "__main__":
    sys.exit(main())
