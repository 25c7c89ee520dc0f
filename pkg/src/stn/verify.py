"""Closed-form identity checks run by ``stn verify-oracles``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracles import (
    QuadraticBilevel,
    RidgeProblem,
    fd_hessian_blocks,
    gated_response_params,
    gated_response_weights,
    implicit_response_jacobian,
    quad_best_response,
    quad_hypergradient,
    quad_response_jacobian,
    ridge_solution,
    ridge_solution_direct,
)


@dataclass
class Check:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<40s} err={self.error:.3e} tol={self.tol:.0e}"


def _rel(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - b)) / max(np.max(np.abs(b)), 1e-300))


def quadratic_checks(trials: int = 10, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    stationarity = jacobian = implicit = hyper = 0.0
    for _ in range(trials):
        n, m = rng.integers(1, 6, size=2)
        p = QuadraticBilevel.random(n, m, rng)
        lam = rng.normal(size=n)
        theta = quad_best_response(p, lam)
        stationarity = max(stationarity, np.max(np.abs(p.f.grad_theta(lam, theta))))
        J = quad_response_jacobian(p)
        jacobian = max(jacobian, _rel(p.f.C @ J, -p.f.B.T))
        H, X = fd_hessian_blocks(p.f.grad_theta, lam, theta)
        implicit = max(implicit, _rel(implicit_response_jacobian(H, X), J))
        h = 1e-5
        fd = np.array([(p.F(lam + h * e, quad_best_response(p, lam + h * e))
                        - p.F(lam - h * e, quad_best_response(p, lam - h * e))) / (2 * h)
                       for e in np.eye(n)])
        hyper = max(hyper, _rel(quad_hypergradient(p, lam), fd))
    return [
        Check("best response is stationary", stationarity, 1e-10),
        Check("C J = -B^T", jacobian, 1e-10),
        Check("implicit Jacobian from FD Hessians", implicit, 1e-6),
        Check("hypergradient vs finite differences", hyper, 1e-6),
    ]


def ridge_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 6))
    t = rng.normal(size=40)
    rp = RidgeProblem(X, t)
    Q0, s0, v, c = gated_response_params(rp)
    lams = np.linspace(-4, 4, 9)
    svd_err = max(_rel(ridge_solution(rp, l), ridge_solution_direct(X, t, l)) for l in lams)
    gated_err = max(_rel(gated_response_weights(Q0, s0, v, c, l), ridge_solution(rp, l)) for l in lams)
    recon = _rel(rp.U_svd @ np.diag(rp.D_diag) @ rp.V_svd.T, X)
    return [
        Check("SVD reconstruction", recon, 1e-12),
        Check("ridge SVD form vs normal equations", svd_err, 1e-10),
        Check("gated response equals ridge path", gated_err, 1e-10),
    ]


def run_all(seed: int = 0) -> list[Check]:
    return quadratic_checks(seed=seed) + ridge_checks(seed=seed)
