"""Sparse matrix helpers and a diagonally preconditioned GMRES solver.

Matrix storage is scipy CSR; the solver is written out explicitly because
the surrounding Newton loop needs the residual history, the breakdown
diagnostics and a fixed convergence convention: the iteration is run on the
Jacobi-preconditioned system, so the recorded residual norms are
||inv(diag(A)) (b - A x)||_2 and convergence is relative to the initial
preconditioned residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GmresControls",
    "GmresResult",
    "JacobiPreconditioner",
    "ZeroDiagonalError",
    "jacobi_preconditioner",
    "gmres_solve",
    "spmv",
]


class ZeroDiagonalError(ValueError):
    """A zero diagonal entry, which the assembly never produces legitimately."""

    def __init__(self, index):
        super().__init__(f"zero diagonal entry at index {index}")
        self.index = index


def spmv(A, x):
    """Sparse matrix-vector product with an explicit dimension check."""
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix is {A.shape}, vector has {x.shape[0]} entries")
    return A @ x


@dataclass(frozen=True)
class JacobiPreconditioner:
    """Componentwise multiplication by 1/diag(A)."""

    inv_diag: np.ndarray

    def __call__(self, v):
        return self.inv_diag * v


def jacobi_preconditioner(A):
    """Diagonal (Jacobi) preconditioner of a sparse matrix."""
    diag = A.diagonal()
    zero = np.flatnonzero(diag == 0.0)
    if zero.size:
        raise ZeroDiagonalError(int(zero[0]))
    return JacobiPreconditioner(inv_diag=1.0 / diag)


@dataclass(frozen=True)
class GmresControls:
    tolerance: float = 1e-3
    max_iterations: int = 500
    restart: int | None = None

    def __post_init__(self):
        if self.tolerance <= 0.0:
            raise ValueError("GMRES tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("GMRES needs at least one iteration")


@dataclass
class GmresResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual_history: np.ndarray
    relative_residual: float
    breakdown: bool = False
    norm_convention: str = "preconditioned residual, relative to initial preconditioned residual"


def gmres_solve(A, b, x0=None, preconditioner=None, controls=GmresControls()):
    """GMRES on the preconditioned system with modified Gram-Schmidt.

    Stops when ||P (b - A x)|| <= tolerance * ||P (b - A x0)|| or after
    max_iterations total inner iterations; running out of iterations is a
    reportable outcome (converged=False, best iterate returned), not an
    error.  A second orthogonalization pass is applied when cancellation is
    detected; exact (happy) breakdown terminates with the exact solution.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"dimension mismatch: matrix is {A.shape}, rhs has {n} entries")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if preconditioner is None:
        precond = lambda v: v
    else:
        precond = preconditioner

    r = precond(b - A @ x)
    beta0 = float(np.linalg.norm(r))
    history = [beta0]
    if beta0 == 0.0:
        return GmresResult(x=x, converged=True, iterations=0,
                           residual_history=np.array(history), relative_residual=0.0)
    target = controls.tolerance * beta0

    m = controls.restart or controls.max_iterations
    total_iters = 0
    breakdown = False
    converged = False

    while total_iters < controls.max_iterations and not converged and not breakdown:
        beta = float(np.linalg.norm(r))
        if beta <= target:
            converged = True
            break
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / beta
        g[0] = beta
        k_used = 0

        for k in range(m):
            if total_iters >= controls.max_iterations:
                break
            w = precond(A @ V[k])
            norm_before = float(np.linalg.norm(w))
            for j in range(k + 1):
                H[j, k] = V[j] @ w
                w -= H[j, k] * V[j]
            norm_after = float(np.linalg.norm(w))
            if norm_after < 0.7 * norm_before:
                # severe cancellation: one extra Gram-Schmidt sweep
                for j in range(k + 1):
                    corr = V[j] @ w
                    H[j, k] += corr
                    w -= corr * V[j]
                norm_after = float(np.linalg.norm(w))
            H[k + 1, k] = norm_after
            if not np.isfinite(norm_after):
                breakdown = True
                break
            happy = norm_after <= 1e-14 * max(beta0, 1.0)
            if not happy:
                V[k + 1] = w / norm_after

            for j in range(k):
                t = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
                H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
                H[j, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]

            total_iters += 1
            k_used = k + 1
            history.append(abs(float(g[k + 1])))
            if happy or history[-1] <= target:
                converged = True
                break

        if k_used > 0:
            y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
            x = x + V[:k_used].T @ y
        r = precond(b - A @ x)
        if converged and float(np.linalg.norm(r)) > target * (1.0 + 1e-9):
            # the implicit estimate was optimistic; keep iterating (restart)
            converged = False

    rel = float(np.linalg.norm(r)) / beta0
    return GmresResult(x=x, converged=converged and bool(np.all(np.isfinite(x))),
                       iterations=total_iters, residual_history=np.array(history),
                       relative_residual=rel, breakdown=breakdown)
