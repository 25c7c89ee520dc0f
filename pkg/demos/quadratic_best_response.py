"""Best-response fitting and hyperparameter descent on quadratic problems with known answers.

Part 1 fits an affine best response by sampling hyperparameters around a point
and compares it with the closed form. Part 2 runs the alternating trainer on a
1-D problem whose optimal hyperparameter is known, and shows how the entropy
weight steers the perturbation scale.

    python3 demos/quadratic_best_response.py
"""

import numpy as np

from stn import HyperParam, HyperSpace, LambdaDistribution, OptimizerSpec, TrainConfig, global_fit, stn_fit
from stn.models import QuadraticModel
from stn.oracles import QuadraticBilevel, quad_affine_fit_exact, quad_best_response, scalar_bilevel

rng = np.random.default_rng(0)

# Part 1: sampled fit versus closed form
problem = QuadraticBilevel.random(3, 4, rng)
lam0 = rng.normal(size=3)
print("affine best response, 3 hyperparameters, 4 parameters")
for sigma in (0.1, 1.0):
    space = HyperSpace([HyperParam(f"l{j}") for j in range(3)], init=lam0, sigma=sigma)
    model = QuadraticModel(problem, space, rng, center=lam0)
    cfg = TrainConfig(optimizer_elem=OptimizerSpec("adam", 0.1), batch_size=128, steps_per_epoch=50,
                      max_epochs=40, seed=0)
    global_fit(model, space, LambdaDistribution("gaussian", mean=lam0, std=sigma), None, cfg, lr_decay=0.93)
    U, b = quad_affine_fit_exact(problem, lam0, sigma)
    print(f"  sigma={sigma:<4} max |U - U*| = {np.abs(model.U.data - U).max():.2e}"
          f"   max |b - b*| = {np.abs(model.intercept() - b).max():.2e}")
# for a quadratic lower level the slope does not depend on sigma
print(f"  fitted response at lam0 vs exact: {np.abs(model.U.data @ lam0 + model.intercept() - quad_best_response(problem, lam0)).max():.2e}")

# Part 2: the 1-D task. theta*(lam) = -0.2 lam, and F is minimized where theta* = 1, at lam = -5.
print("\n1-D task, optimum at lam = -5")
for tau in (0.0, 1e-3, 10.0):
    space = HyperSpace([HyperParam("lam")], sigma=0.5, tau=tau)
    model = QuadraticModel(scalar_bilevel(), space)
    cfg = TrainConfig(optimizer_elem=OptimizerSpec("sgd", 0.01), optimizer_hyper=OptimizerSpec("sgd", 5.0),
                      optimizer_scale=OptimizerSpec("adam", 0.02, beta2=0.9),
                      batch_size=32, steps_per_epoch=400, max_epochs=10, seed=0)
    res = stn_fit(model, space, None, None, cfg)
    sig = res.schedule.column("lam_sigma")
    print(f"  tau={tau:<6} lam {space.lam.data[0]:+.3f}   sigma {sig[0]:.3g} -> {sig[-1]:.3g}"
          f"   F {res.final['valid_loss']:+.4f} (minimum -0.5)")
