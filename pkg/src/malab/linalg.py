"""Linear solvers for the assembled symmetric positive-semidefinite systems.

The contract solver is Jacobi-preconditioned conjugate gradients with a
curvature guard for semidefinite operators; a cached sparse LU factorization
is the fast path for sweeps with many right-hand sides.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError


def pcg(A, b, rtol: float = 1e-10, max_iter: int | None = None, x0=None):
    """Solve A x = b for symmetric positive-semidefinite sparse A.

    Jacobi preconditioning; stops on ||r|| <= rtol ||b||.  If a search
    direction has nonpositive curvature the system is (numerically)
    semidefinite: iteration stops and the current range-space iterate is
    returned together with the flag.
    """
    n = A.shape[0]
    if max_iter is None:
        max_iter = 20 * n
    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)

    x = np.zeros(n) if x0 is None else np.asarray(x0, float).copy()
    r = b - A @ x
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return x, {"iterations": 0, "residual": 0.0, "flag": "ok"}
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    history = [np.linalg.norm(r) / norm_b]
    for it in range(max_iter):
        Ap = A @ p
        curv = float(p @ Ap)
        if curv <= 1e-30 * float(p @ p):
            return x, {"iterations": it, "residual": history[-1],
                       "flag": "semidefinite"}
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / norm_b
        history.append(rel)
        if rel <= rtol:
            return x, {"iterations": it + 1, "residual": rel, "flag": "ok"}
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"pcg did not reach rtol={rtol:g} in {max_iter} iterations "
        f"(last residual {history[-1]:.3e})", residuals=history)


class Factorization:
    """Cached sparse LU of a symmetric matrix, for many-RHS sweeps."""

    def __init__(self, A):
        self._lu = spla.splu(sp.csc_matrix(A))

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, float))


def min_ritz_value(A, iters: int = 50, seed: int = 0) -> float:
    """Smallest Ritz value by inverse power iteration on a shifted copy.

    The shift keeps the factorization well posed when A is singular; the
    returned value is the Rayleigh quotient of A itself.
    """
    n = A.shape[0]
    scale = float(np.abs(A.diagonal()).max())
    shift = 1e-12 * scale
    lu = spla.splu(sp.csc_matrix(A + shift * sp.identity(n, format="csr")))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    for _ in range(iters):
        x = lu.solve(x)
        x /= np.linalg.norm(x)
    return float(x @ (A @ x))
