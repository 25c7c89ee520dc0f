"""A gated linear network learns the whole ridge-regression path from sampled penalties.

The ridge solution at log penalty lam is V diag(d / (d^2 + e^lam)) U^T t, so
each singular direction is scaled by the gate sigmoid(-lam + 2 log d) / d.
We first confirm that identity with the closed-form gate parameters, then
train the gates from zero on penalties drawn uniformly from [-3, 3].

    python3 demos/ridge_gated_path.py
"""

import numpy as np

from stn import HyperParam, HyperSpace, LambdaDistribution, OptimizerSpec, TrainConfig, global_fit
from stn.data import make_regression
from stn.models import GatedRidgeModel
from stn.oracles import RidgeProblem, gated_response_params, gated_response_weights, ridge_solution

ds = make_regression(5, 400, [4.0, 2.0, 1.0, 0.5, 0.25], noise_std=0.5, seed=0)
rp = RidgeProblem(ds.train.x, ds.train.y)
Q0, s0, v, c = gated_response_params(rp)
print("closed-form gates: v =", v, " c = 2 log d =", np.round(c, 4))
lams = [-3.0, -1.0, 0.0, 1.0, 3.0]
err = max(np.abs(gated_response_weights(Q0, s0, v, c, l) - ridge_solution(rp, l)).max() for l in lams)
print(f"identity check, max weight error over the path: {err:.1e}\n")

space = HyperSpace([HyperParam("log_penalty")])
model = GatedRidgeModel(Q0, s0, space, n_train=len(ds.train))
cfg = TrainConfig(optimizer_elem=OptimizerSpec("adam", 0.05), batch_size=len(ds.train), max_epochs=12000, seed=0)
history = global_fit(model, space, LambdaDistribution("uniform", low=-3.0, high=3.0), ds.train, cfg,
                     lr_decay=0.9994)
print(f"training objective {history[0]:.4f} -> {history[-1]:.4f} over {len(history)} epochs")
print("learned v:", np.round(model.net.v.data, 3))
print("learned c:", np.round(model.net.c.data, 3), "  target:", np.round(c, 3))
print("\n  lam   relative prediction error vs ridge (test split)")
for l in lams:
    ref = ds.test.x @ ridge_solution(rp, l)
    rel = np.linalg.norm(model.predict(ds.test.x, l) - ref) / np.linalg.norm(ref)
    print(f"  {l:+.0f}   {rel:.2e}")
