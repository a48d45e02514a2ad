"""
Jacobi-preconditioned conjugate gradient for the SPD M-matrix systems of the scheme.
"""
from dataclasses import dataclass
from typing import Optional
import logging
import math

import numpy as np
import scipy.sparse as sp

from errors import ConfigError, SolverBreakdownError, SolverNotConvergedError

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverConfig:
    """
    Stopping rule ||Ax - b||_2 <= max(rel_tol * ||b||_2, abs_tol).

    max_iter=None means 10 * n for a system of size n.
    """
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_iter: Optional[int] = None

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ConfigError(f"rel_tol must be positive, got {self.rel_tol}", key='linear_rel_tol')
        if not self.abs_tol > 0:
            raise ConfigError(f"abs_tol must be positive, got {self.abs_tol}", key='linear_abs_tol')
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}", key='linear_max_iter')

    def iteration_cap(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else max(10 * n, 1)


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float
    target: float


def _as_csr(A):
    m = getattr(A, 'matrix', A)
    return m if sp.issparse(m) else sp.csr_matrix(np.asarray(m, dtype=float))


def pcg(A, b, cfg: Optional[SolverConfig] = None, shift=None, x0=None) -> SolveResult:
    """
    Solve (A + diag(shift)) x = b by conjugate gradient with a Jacobi preconditioner.

    Args:
        A: SparseSpdMatrix, scipy sparse matrix or dense array
        b: Right-hand side
        cfg: Stopping rule (defaults to SolverConfig())
        shift: Optional nonnegative diagonal added to A (scalar or per-row)
        x0: Optional initial guess

    Returns:
        SolveResult with solution, iteration count and final true residual

    Raises:
        SolverBreakdownError: non-positive diagonal or curvature p.Ap <= 0
        SolverNotConvergedError: residual target not met within the iteration cap
    """
    cfg = cfg or SolverConfig()
    m = _as_csr(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if m.shape != (n, n):
        raise SolverBreakdownError(f"matrix shape {m.shape} does not match right-hand side of length {n}")
    if not np.all(np.isfinite(b)):
        raise SolverBreakdownError("right-hand side is not finite")

    diag = m.diagonal().astype(float)
    if shift is not None:
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (n,))
        if np.any(shift < 0):
            raise SolverBreakdownError("diagonal shift must be nonnegative")
        m = m + sp.diags(shift)
        diag = diag + shift
    if np.any(diag <= 0):
        row = int(np.flatnonzero(diag <= 0)[0])
        raise SolverBreakdownError(f"non-positive diagonal {diag[row]:.3e} in row {row}; matrix is not SPD")

    b_norm = float(np.linalg.norm(b))
    target = max(cfg.rel_tol * b_norm, cfg.abs_tol)
    a_norm = float(abs(m).sum(axis=1).max()) if n else 0.0
    cap = cfg.iteration_cap(n)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    r = b - m @ x
    res = float(np.linalg.norm(r))
    if res <= target:
        return SolveResult(x=x, iterations=0, residual=res, target=target)

    inv_d = 1.0 / diag
    z = inv_d * r
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < cap:
        it += 1
        q = m @ p
        curvature = float(p @ q)
        if curvature <= 0 or not math.isfinite(curvature):
            raise SolverBreakdownError(
                f"non-positive curvature p.Ap = {curvature:.3e} at iteration {it}; matrix is not SPD",
                iterations=it, residual=res)
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * q
        if np.linalg.norm(r) <= target:
            # Confirm with the true residual; the recursion drifts near roundoff
            r = b - m @ x
            res = float(np.linalg.norm(r))
            floor = 64 * _EPS * (a_norm * float(np.linalg.norm(x)) + b_norm)
            if res <= max(target, floor):
                logger.debug(f"PCG converged: n={n}, iterations={it}, residual={res:.3e}")
                return SolveResult(x=x, iterations=it, residual=res, target=target)
            z = inv_d * r
            p = z.copy()
            rz = float(r @ z)
            continue
        z = inv_d * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    res = float(np.linalg.norm(b - m @ x))
    raise SolverNotConvergedError(
        f"PCG did not converge in {cap} iterations (residual {res:.3e}, target {target:.3e})",
        iterations=cap, residual=res)


def solve_spd(A, b, cfg: Optional[SolverConfig] = None, shift=None, x0=None) -> np.ndarray:
    """Solution vector of pcg(A, b, cfg, shift, x0)."""
    return pcg(A, b, cfg, shift=shift, x0=x0).x
