"""Closed-form bilevel ground truth.

Quadratic lower-level problems have an affine best response, and ridge
regression has an exact sigmoid-gated best response in the SVD basis. These
functions are plain numpy so they stay independent of the autodiff path they
are used to check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class NotPositiveDefinite(ValueError):
    pass


def _cholesky(C: np.ndarray):
    try:
        return scipy.linalg.cho_factor(C, lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("matrix is not positive definite") from None


def _sym(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return 0.5 * (M + M.T)


@dataclass
class Quadratic:
    """q(lam, theta) = 1/2 [lam; theta]^T [[A, B], [B^T, C]] [lam; theta] + d.lam + e.theta"""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    d: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        self.A = _sym(self.A)
        self.C = _sym(self.C)
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.d = np.atleast_1d(np.asarray(self.d, dtype=float))
        self.e = np.atleast_1d(np.asarray(self.e, dtype=float))
        n, m = self.B.shape
        if self.A.shape != (n, n) or self.C.shape != (m, m):
            raise ValueError(f"inconsistent block shapes A{self.A.shape} B{self.B.shape} C{self.C.shape}")
        if self.d.shape != (n,) or self.e.shape != (m,):
            raise ValueError(f"d must have length {n} and e length {m}")

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def __call__(self, lam, theta):
        """Value for a single point or row-wise for (B, n) / (B, m) batches."""
        lam, theta = np.asarray(lam, dtype=float), np.asarray(theta, dtype=float)
        val = (0.5 * np.einsum("...i,ij,...j->...", lam, self.A, lam)
               + np.einsum("...i,ij,...j->...", lam, self.B, theta)
               + 0.5 * np.einsum("...i,ij,...j->...", theta, self.C, theta)
               + lam @ self.d + theta @ self.e)
        return val

    def grad_lam(self, lam, theta) -> np.ndarray:
        return self.A @ lam + self.B @ theta + self.d

    def grad_theta(self, lam, theta) -> np.ndarray:
        return self.B.T @ lam + self.C @ theta + self.e


@dataclass
class QuadraticBilevel:
    """Lower objective ``f`` (PD in theta) and an independent upper objective ``F``."""

    f: Quadratic
    F: Quadratic
    _chol: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.F.B.shape != self.f.B.shape:
            raise ValueError("upper and lower objectives must share (n, m)")
        self._chol = _cholesky(self.f.C)

    @property
    def n(self) -> int:
        return self.f.n

    @property
    def m(self) -> int:
        return self.f.m

    def solve_C(self, rhs) -> np.ndarray:
        return scipy.linalg.cho_solve(self._chol, rhs)

    @classmethod
    def random(cls, n: int, m: int, rng: np.random.Generator, ridge: float = 0.1) -> "QuadraticBilevel":
        """Random instance with C = M^T M + ridge * I, hence positive definite."""
        def block(C):
            A = rng.normal(size=(n, n))
            return Quadratic(A @ A.T / n, rng.normal(size=(n, m)) / np.sqrt(m), C,
                             rng.normal(size=n), rng.normal(size=m))

        M = rng.normal(size=(m, m)) / np.sqrt(m)
        f = block(M.T @ M + ridge * np.eye(m))
        MF = rng.normal(size=(m, m)) / np.sqrt(m)
        F = block(MF.T @ MF + ridge * np.eye(m))
        return cls(f, F)


def check_positive_definite(C) -> None:
    _cholesky(_sym(C))


def quad_best_response(p: QuadraticBilevel, lam) -> np.ndarray:
    """theta*(lam) = -C^{-1}(e + B^T lam)."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return -p.solve_C(p.f.e + p.f.B.T @ lam)


def quad_response_jacobian(p: QuadraticBilevel) -> np.ndarray:
    """d theta*/d lam = -C^{-1} B^T, shape (m, n)."""
    return -p.solve_C(p.f.B.T)


def implicit_response_jacobian(hess_theta, cross) -> np.ndarray:
    """-[d2f/dtheta2]^{-1} d2f/(dlam dtheta), with ``cross`` shaped (m, n)."""
    chol = _cholesky(_sym(hess_theta))
    return -scipy.linalg.cho_solve(chol, np.atleast_2d(cross))


def fd_hessian_blocks(grad_theta, lam, theta, h: float = 1e-5):
    """Central-difference d2f/dtheta2 and d2f/(dlam dtheta) from a theta-gradient callable."""
    lam, theta = np.asarray(lam, dtype=float), np.asarray(theta, dtype=float)
    m, n = theta.size, lam.size
    H = np.empty((m, m))
    X = np.empty((m, n))
    for k in range(m):
        dt = np.zeros(m)
        dt[k] = h
        H[:, k] = (grad_theta(lam, theta + dt) - grad_theta(lam, theta - dt)) / (2 * h)
    for k in range(n):
        dl = np.zeros(n)
        dl[k] = h
        X[:, k] = (grad_theta(lam + dl, theta) - grad_theta(lam - dl, theta)) / (2 * h)
    return H, X


def quad_hypergradient(p: QuadraticBilevel, lam) -> np.ndarray:
    """dF*/dlam = dF/dlam + (d theta*/d lam)^T dF/dtheta at (lam, theta*(lam))."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    theta = quad_best_response(p, lam)
    J = quad_response_jacobian(p)
    return p.F.grad_lam(lam, theta) + J.T @ p.F.grad_theta(lam, theta)


def quad_affine_fit_exact(p: QuadraticBilevel, lam0, sigma: float):
    """Minimizer (U, b) of E_eps f(lam0 + eps, U (lam0 + eps) + b), eps ~ N(0, sigma^2 I)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive: with sigma = 0 the slope is not identifiable")
    lam0 = np.atleast_1d(np.asarray(lam0, dtype=float))
    U = quad_response_jacobian(p)
    b = quad_best_response(p, lam0) - U @ lam0
    return U, b


def quad_expected_lower(p: QuadraticBilevel, lam0, sigma: float, U, b) -> float:
    """Closed-form E_eps f(lam0 + eps, U(lam0 + eps) + b) for isotropic Gaussian eps."""
    lam0 = np.atleast_1d(np.asarray(lam0, dtype=float))
    f = p.f
    mean = f(lam0, U @ lam0 + b)
    s2 = float(sigma) ** 2
    return float(mean + 0.5 * s2 * (np.trace(f.A) + 2 * np.trace(f.B @ U) + np.trace(U.T @ f.C @ U)))


def svd(X, tol: float = 1e-15, max_sweeps: int = 100):
    """Thin SVD by one-sided Jacobi rotations; singular values sorted descending.

    Returns ``(U, d, V)`` with ``X = U diag(d) V^T``. Needs N >= D.
    """
    A = np.array(X, dtype=float, copy=True)
    N, D = A.shape
    if N < D:
        raise ValueError(f"svd needs N >= D, got {A.shape}")
    V = np.eye(D)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(D - 1):
            for j in range(i + 1, D):
                a = A[:, i] @ A[:, i]
                b = A[:, j] @ A[:, j]
                c = A[:, i] @ A[:, j]
                if abs(c) <= tol * np.sqrt(a * b) or c == 0.0:
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * c)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                Ai, Aj = A[:, i].copy(), A[:, j].copy()
                A[:, i], A[:, j] = cs * Ai - sn * Aj, sn * Ai + cs * Aj
                Vi, Vj = V[:, i].copy(), V[:, j].copy()
                V[:, i], V[:, j] = cs * Vi - sn * Vj, sn * Vi + cs * Vj
        if not rotated:
            break
    else:
        raise RuntimeError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")
    d = np.linalg.norm(A, axis=0)
    order = np.argsort(-d, kind="stable")
    d, A, V = d[order], A[:, order], V[:, order]
    U = np.zeros_like(A)
    nz = d > 0
    U[:, nz] = A[:, nz] / d[nz]
    return U, d, V


@dataclass
class RidgeProblem:
    X: np.ndarray
    t: np.ndarray
    U_svd: np.ndarray = field(init=False)
    D_diag: np.ndarray = field(init=False)
    V_svd: np.ndarray = field(init=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        if self.X.ndim != 2 or self.t.shape != (self.X.shape[0],):
            raise ValueError(f"X must be N x D and t length N, got {self.X.shape}, {self.t.shape}")
        self.U_svd, self.D_diag, self.V_svd = svd(self.X)
        if not np.all(self.D_diag > 0):
            raise ValueError("degenerate SVD: X has a zero singular value")


def ridge_solution(rp: RidgeProblem, lam: float) -> np.ndarray:
    """u*(lam) = (X^T X + exp(lam) I)^{-1} X^T t via V (D^2 + exp(lam) I)^{-1} D U^T t."""
    d = rp.D_diag
    return rp.V_svd @ (d / (d * d + np.exp(lam)) * (rp.U_svd.T @ rp.t))


def ridge_solution_direct(X, t, lam: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.linalg.solve(X.T @ X + np.exp(lam) * np.eye(X.shape[1]), X.T @ t)


def gated_response_params(rp: RidgeProblem):
    """(Q0, s0, v, c) with Q*(lam)^T s0 = u*(lam) for every lam."""
    d = rp.D_diag
    if np.any(d <= 0):
        raise ValueError("gated response needs strictly positive singular values")
    Q0 = rp.V_svd.T
    s0 = (rp.U_svd.T @ rp.t) / d
    v = -np.ones_like(d)
    c = 2.0 * np.log(d)
    return Q0, s0, v, c


def gated_response_weights(Q0, s0, v, c, lam: float) -> np.ndarray:
    """Q*(lam)^T s0 where Q*(lam) = sigmoid(lam v + c) row-scaling Q0."""
    gate = 1.0 / (1.0 + np.exp(-(lam * np.asarray(v) + np.asarray(c))))
    return np.asarray(Q0).T @ (gate * np.asarray(s0))


def scalar_bilevel(coupling: float = 0.2, curvature: float = 1.0, target: float = 1.0) -> QuadraticBilevel:
    """1-D task: f = 1/2 curvature theta^2 + coupling lam theta, F = 1/2 (theta - target)^2 (up to a constant)."""
    f = Quadratic([[0.0]], [[coupling]], [[curvature]], [0.0], [0.0])
    F = Quadratic([[0.0]], [[0.0]], [[1.0]], [0.0], [-target])
    return QuadraticBilevel(f, F)
