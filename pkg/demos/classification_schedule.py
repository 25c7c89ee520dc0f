"""Tuning an L2 coefficient online on a small overfitting classification task.

A self-tuning network adjusts the L2 weight while it trains, starting from
three different values. A 20-point grid of ordinary runs, each with the same
epoch budget as one self-tuning run, gives the fixed-hyperparameter baseline.

    python3 demos/classification_schedule.py
"""

from pathlib import Path

from stn.config import ModelBuilder, build_dataset, build_space, hyperparams, load_config, trainer_config
from stn.search import grid_search
from stn.trainer import stn_fit

cfg = load_config(Path(__file__).parent / "configs" / "classification_l2.json")
data = build_dataset(cfg)
tcfg = trainer_config(cfg)
print(f"train/valid/test sizes {data.split_sizes}, {tcfg.max_epochs} epochs, label noise "
      f"{cfg.data['label_noise']}\n")

print("l2 schedule (constrained value at the end of the epoch)")
print("  init    " + "  ".join(f"ep{e:<4}" for e in (10, 50, 100, 150, 200)) + "  final valid")
for init in (0.01, 0.1, 1.0):
    space = build_space(cfg)
    space.set_constrained("l2", init)
    res = stn_fit(ModelBuilder(cfg, data)(space, cfg.seed), space, data.train, data.valid, tcfg, test=data.test)
    by_epoch = {r["epoch"]: r["l2_constrained"] for r in res.schedule.rows}
    cells = "  ".join(f"{by_epoch[e]:<6.3g}" for e in (10, 50, 100, 150, 200))
    print(f"  {init:<6}  {cells}  {res.final['valid_loss']:.4f}")

grid = grid_search(hyperparams(cfg), 20, tcfg, data, ModelBuilder(cfg, data, hyper=False))
best = grid.best()
print(f"\ngrid: best valid {best.valid_loss:.4f} at l2={best.spec.assignment['l2']:.3g} "
      f"({len(grid.trials)} runs of {tcfg.max_epochs} epochs)")
print("best-so-far:", " ".join(f"{v:.3f}" for v in grid.best_so_far))
