"""
Fractional-step integrator for the P1 radiative diffusion system.

Each step first solves the implicit temperature equation with the lagged
radiative intensity,

    |K| (u^{n+1} - u^n)/dt + (A_D u^{n+1})_K + |K| (|u^{n+1}| (u^{n+1})^3 - phi^n_K) = 0,

by Newton (or Picard) iteration, then the linear intensity equation

    |K| phi^{n+1}_K + (A_N phi^{n+1})_K = |K| (u^{n+1}_K)^4.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Callable, List, Optional, Tuple
import logging
import math

import numpy as np

from assembly_cache import get_cache
from discrete_space import CellField, SpaceTimeField, project_initial, quadrature_points
from errors import ConfigError, FieldError, MaxPrincipleError, NonlinearSolverError
from linalg import SolverConfig, pcg
from manufactured import ManufacturedSolution
from mesh import GeometryTables, Mesh, require_admissible
from operators import LaplacianPair, verify_structure
from utils import CLAMP_REL, MAX_PRINCIPLE_REL, step_count

logger = logging.getLogger(__name__)

NONLINEAR_SOLVERS = ('newton', 'picard')
NONLINEAR_TERMS = ('abs_cubic', 'quartic')

# Halvings tried before a Newton step is declared stagnant
MAX_DAMPING = 12

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class SchemeConfig:
    """
    Time grid, nonlinear solver settings and initial data of a run.

    u0 is a nonnegative constant, a vectorized callable u0(x, y) or a CellField.
    """
    dt: float
    T: float
    u0: Any = 0.0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    nonlinear_solver: str = 'newton'
    nonlinear_term: str = 'abs_cubic'
    quadrature: str = 'edge_midpoint'
    linear: SolverConfig = field(default_factory=SolverConfig)
    manufactured: Optional[ManufacturedSolution] = None
    check_jacobian: bool = False

    def __post_init__(self):
        step_count(self.T, self.dt)
        if not self.newton_tol > 0:
            raise ConfigError(f"must be positive, got {self.newton_tol}", key='newton_tol')
        if self.newton_max_iter < 1:
            raise ConfigError(f"must be >= 1, got {self.newton_max_iter}", key='newton_max_iter')
        if self.nonlinear_solver not in NONLINEAR_SOLVERS:
            raise ConfigError(f"expected one of {NONLINEAR_SOLVERS}, got {self.nonlinear_solver!r}",
                              key='nonlinear_solver')
        if self.nonlinear_term not in NONLINEAR_TERMS:
            raise ConfigError(f"expected one of {NONLINEAR_TERMS}, got {self.nonlinear_term!r}",
                              key='nonlinear_term')

    @property
    def N(self) -> int:
        return step_count(self.T, self.dt)

    @property
    def strict_max_principle(self) -> bool:
        """Sources and the literal quartic term void the maximum principle."""
        return self.manufactured is None and self.nonlinear_term == 'abs_cubic'


@dataclass(frozen=True)
class State:
    u: CellField
    phi: CellField
    t: float
    n: int
    u_bar0: float  # max of u^0, fixes the residual scale of every step


@dataclass(frozen=True)
class StepStats:
    n: int
    iterations: int
    residual: float
    damped: int
    linear_iterations: int
    clamped_u: int
    clamped_phi: int
    min_u_raw: float
    min_phi_raw: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    u: SpaceTimeField
    phi: SpaceTimeField
    stats: Tuple[StepStats, ...]
    config: SchemeConfig
    u_bar0: float

    @property
    def mesh(self) -> Mesh:
        return self.u.mesh


def nonlinear_term(u: np.ndarray, kind: str) -> np.ndarray:
    """|u| u^3 (positivity-preserving) or u^4 literally."""
    if kind == 'quartic':
        return u ** 4
    return np.abs(u) * u ** 3


def nonlinear_derivative(u: np.ndarray, kind: str) -> np.ndarray:
    """4|u|u^2 (continuous at 0) or 4u^3."""
    if kind == 'quartic':
        return 4.0 * u ** 3
    return 4.0 * np.abs(u) * u ** 2


def _residual_scale(cfg: SchemeConfig, u_bar0: float) -> float:
    return 1.0 / cfg.dt + u_bar0 ** 3


def _clamp(values: np.ndarray, what: str, n: int, strict: bool) -> Tuple[np.ndarray, int, float]:
    """
    Zero roundoff negatives; raise on genuine ones when strict.

    Returns:
        (clamped values, number clamped, raw minimum)
    """
    raw_min = float(values.min()) if len(values) else 0.0
    if raw_min >= 0:
        return values, 0, raw_min
    scale = float(np.max(np.abs(values)))
    tiny = (values < 0) & (values >= -CLAMP_REL * scale)
    count = int(tiny.sum())
    out = values.copy()
    out[tiny] = 0.0
    if count:
        logger.warning(f"Step {n}: clamped {count} roundoff negatives in {what} (min {raw_min:.3e})")
    rest = np.flatnonzero(out < 0)
    if rest.size and strict:
        cell = int(rest[0])
        raise MaxPrincipleError(
            f"{what} is negative ({out[cell]:.6e}) in cell {cell} at step {n}", step=n, cell=cell)
    return out, count, raw_min


def _sources(cfg: SchemeConfig, tables: GeometryTables, t: float):
    if cfg.manufactured is None:
        return 0.0, 0.0
    xc = tables.circumcenter
    return (cfg.manufactured.source_u(xc[:, 0], xc[:, 1], t),
            cfg.manufactured.source_phi(xc[:, 0], xc[:, 1], t))


def _solve_phi(pair: LaplacianPair, u: np.ndarray, cfg: SchemeConfig, source_phi):
    """(M + A_N) phi = M (u^4 + f_phi), started from u^4 so constants are exact."""
    target = u ** 4 + source_phi
    rhs = pair.mass * np.broadcast_to(target, u.shape)
    linear = cfg.linear
    b_norm = float(np.linalg.norm(rhs))
    if b_norm > 0:
        # Stop on the relative residual only; u^4 decays below any fixed floor
        linear = replace(linear, abs_tol=min(linear.abs_tol, max(linear.rel_tol * b_norm, _TINY)))
    result = pcg(pair.A_neumann, rhs, linear, shift=pair.mass,
                 x0=np.broadcast_to(target, u.shape))
    return result.x, result.iterations


def _initial_values(mesh: Mesh, tables: GeometryTables, cfg: SchemeConfig) -> np.ndarray:
    if cfg.manufactured is not None:
        xc = tables.circumcenter
        return cfg.manufactured.u(xc[:, 0], xc[:, 1], 0.0)
    u0 = cfg.u0
    if isinstance(u0, CellField):
        if not u0.mesh.same_as(mesh):
            raise FieldError("initial field lives on a different mesh")
        values = np.array(u0.values)
    elif callable(u0):
        pts = quadrature_points(mesh, cfg.quadrature)
        samples = np.asarray(u0(pts[..., 0], pts[..., 1]), dtype=float)
        if np.any(samples < 0):
            raise FieldError("initial temperature must be nonnegative; u0 < 0 at some quadrature node")
        values = np.array(project_initial(u0, mesh, cfg.quadrature).values)
    elif np.isscalar(u0):
        values = np.full(mesh.n_cells, float(u0))
    else:
        values = np.array(CellField(mesh, u0).values)
    if np.any(values < 0):
        cell = int(np.flatnonzero(values < 0)[0])
        raise FieldError(f"initial temperature must be nonnegative; u0 = {values[cell]} in cell {cell}")
    return values


def init_state(mesh: Mesh, tables: GeometryTables, pair: LaplacianPair,
               cfg: SchemeConfig) -> State:
    """
    Project u0 onto the cells and solve (M + A_N) phi^0 = M (u^0)^4.

    Raises:
        FieldError: negative initial data
        LinearSolverError: failure of the intensity solve
    """
    u = _initial_values(mesh, tables, cfg)
    if cfg.manufactured is not None:
        xc = tables.circumcenter
        phi = np.asarray(cfg.manufactured.phi(xc[:, 0], xc[:, 1], 0.0), dtype=float)
    else:
        phi, _ = _solve_phi(pair, u, cfg, 0.0)
    phi, _, _ = _clamp(phi, 'phi', 0, cfg.strict_max_principle)
    u_bar0 = float(u.max())
    if cfg.strict_max_principle:
        bound = u_bar0 ** 4 * (1.0 + MAX_PRINCIPLE_REL)
        if phi.max() > bound:
            cell = int(np.argmax(phi))
            raise MaxPrincipleError(f"phi^0 = {phi[cell]:.6e} exceeds (max u^0)^4 = {u_bar0 ** 4:.6e}",
                                    step=0, cell=cell)
    return State(u=CellField(mesh, u), phi=CellField(mesh, phi), t=0.0, n=0, u_bar0=u_bar0)


def _temperature_residual(pair: LaplacianPair, cfg: SchemeConfig, rhs: np.ndarray, u: np.ndarray):
    m = pair.mass
    return m * u / cfg.dt + pair.A_dirichlet.matrix @ u + m * nonlinear_term(u, cfg.nonlinear_term) - rhs


def _scaled_norm(pair: LaplacianPair, F: np.ndarray, scale: float) -> float:
    return float(np.max(np.abs(F / pair.mass))) / scale if len(F) else 0.0


def _newton(pair, cfg, rhs, u_start, scale, n):
    u = u_start.copy()
    F = _temperature_residual(pair, cfg, rhs, u)
    res = _scaled_norm(pair, F, scale)
    damped = 0
    linear_its = 0
    it = 0
    while res > cfg.newton_tol:
        if it >= cfg.newton_max_iter:
            raise NonlinearSolverError(
                f"Newton did not converge in {it} iterations at step {n} (scaled residual {res:.3e})",
                step=n, iterations=it, residual=res)
        it += 1
        aug = pair.mass * nonlinear_derivative(u, cfg.nonlinear_term)
        if cfg.check_jacobian:
            report = verify_structure(pair, cfg.dt, aug)
            if not report.passed:
                raise NonlinearSolverError(f"Jacobian lost the M-matrix structure at step {n}, iteration {it}",
                                           step=n, iterations=it, residual=res)
        sol = pcg(pair.A_dirichlet, -F, cfg.linear, shift=pair.mass / cfg.dt + aug)
        linear_its += sol.iterations
        lam = 1.0
        for _ in range(MAX_DAMPING + 1):
            u_try = u + lam * sol.x
            F_try = _temperature_residual(pair, cfg, rhs, u_try)
            res_try = _scaled_norm(pair, F_try, scale)
            if res_try < res or res_try <= cfg.newton_tol:
                break
            lam *= 0.5
        else:
            raise NonlinearSolverError(
                f"Newton stagnated at step {n}, iteration {it} (scaled residual {res:.3e})",
                step=n, iterations=it, residual=res)
        if lam < 1.0:
            damped += 1
            logger.warning(f"Step {n}: Newton iteration {it} damped to lambda={lam:g}")
        u, F, res = u_try, F_try, res_try
        logger.debug(f"Step {n}: Newton iteration {it}, scaled residual {res:.3e}, CG {sol.iterations}")
    return u, it, res, damped, linear_its


def _picard(pair, cfg, rhs, u_start, scale, n):
    """Freeze |u_k| u_k^2 in the diagonal and solve the linear M-matrix system."""
    u = u_start.copy()
    res = _scaled_norm(pair, _temperature_residual(pair, cfg, rhs, u), scale)
    linear_its = 0
    it = 0
    while res > cfg.newton_tol:
        if it >= cfg.newton_max_iter:
            raise NonlinearSolverError(
                f"Picard did not converge in {it} iterations at step {n} (scaled residual {res:.3e})",
                step=n, iterations=it, residual=res)
        it += 1
        frozen = u ** 3 if cfg.nonlinear_term == 'quartic' else np.abs(u) * u ** 2
        sol = pcg(pair.A_dirichlet, rhs, cfg.linear, shift=pair.mass / cfg.dt + pair.mass * frozen, x0=u)
        linear_its += sol.iterations
        u = sol.x
        res = _scaled_norm(pair, _temperature_residual(pair, cfg, rhs, u), scale)
        logger.debug(f"Step {n}: Picard iteration {it}, scaled residual {res:.3e}")
    return u, it, res, 0, linear_its


def advance_u(state: State, cfg: SchemeConfig, pair: LaplacianPair,
              tables: Optional[GeometryTables] = None) -> Tuple[CellField, StepStats]:
    """
    Solve the implicit temperature equation for u^{n+1} with phi^n lagged.

    Args:
        state: Current state (u^n, phi^n)
        cfg: Scheme configuration
        pair: Laplacians of the state's mesh
        tables: Geometry (needed only for manufactured sources)

    Returns:
        (u^{n+1}, partial StepStats)

    Raises:
        NonlinearSolverError: no convergence within newton_max_iter
        MaxPrincipleError: negative or growing temperature (strict mode)
    """
    n = state.n + 1
    tables = tables or get_cache().geometry(state.u.mesh)
    source_u, _ = _sources(cfg, tables, state.t + cfg.dt)
    u_old = state.u.values
    rhs = pair.mass * (u_old / cfg.dt + state.phi.values + source_u)
    scale = _residual_scale(cfg, state.u_bar0)

    solver = _newton if cfg.nonlinear_solver == 'newton' else _picard
    u, its, res, damped, linear_its = solver(pair, cfg, rhs, u_old, scale, n)

    strict = cfg.strict_max_principle
    u, clamped, raw_min = _clamp(u, 'u', n, strict)
    if strict and len(u):
        bound = float(u_old.max()) * (1.0 + MAX_PRINCIPLE_REL)
        if u.max() > bound:
            cell = int(np.argmax(u))
            raise MaxPrincipleError(
                f"u = {u[cell]:.6e} in cell {cell} exceeds max u^{n - 1} = {u_old.max():.6e} at step {n}",
                step=n, cell=cell)
    stats = StepStats(n=n, iterations=its, residual=res, damped=damped, linear_iterations=linear_its,
                      clamped_u=clamped, clamped_phi=0, min_u_raw=raw_min, min_phi_raw=0.0)
    return CellField(state.u.mesh, u), stats


def advance_phi(u_new: CellField, state: State, cfg: SchemeConfig, pair: LaplacianPair,
                tables: Optional[GeometryTables] = None) -> Tuple[CellField, int, int, float]:
    """
    Solve (M + A_N) phi^{n+1} = M (u^{n+1})^4.

    Returns:
        (phi^{n+1}, CG iterations, clamped count, raw minimum)
    """
    n = state.n + 1
    tables = tables or get_cache().geometry(u_new.mesh)
    _, source_phi = _sources(cfg, tables, state.t + cfg.dt)
    phi, its = _solve_phi(pair, u_new.values, cfg, source_phi)
    strict = cfg.strict_max_principle
    phi, clamped, raw_min = _clamp(phi, 'phi', n, strict)
    if strict and len(phi):
        bound = float(u_new.values.max()) ** 4 * (1.0 + MAX_PRINCIPLE_REL)
        if phi.max() > bound:
            cell = int(np.argmax(phi))
            raise MaxPrincipleError(
                f"phi = {phi[cell]:.6e} in cell {cell} exceeds (max u^{n})^4 = {bound:.6e} at step {n}",
                step=n, cell=cell)
    return CellField(u_new.mesh, phi), its, clamped, raw_min


def step(state: State, cfg: SchemeConfig, pair: LaplacianPair,
         tables: Optional[GeometryTables] = None) -> Tuple[State, StepStats]:
    """advance_u, then advance_phi, then t += dt."""
    u_new, stats = advance_u(state, cfg, pair, tables)
    phi_new, its, clamped, raw_min = advance_phi(u_new, state, cfg, pair, tables)
    stats = StepStats(n=stats.n, iterations=stats.iterations, residual=stats.residual,
                      damped=stats.damped, linear_iterations=stats.linear_iterations + its,
                      clamped_u=stats.clamped_u, clamped_phi=clamped,
                      min_u_raw=stats.min_u_raw, min_phi_raw=raw_min)
    new_state = State(u=u_new, phi=phi_new, t=(state.n + 1) * cfg.dt, n=state.n + 1,
                      u_bar0=state.u_bar0)
    return new_state, stats


def run(mesh: Mesh, cfg: SchemeConfig,
        on_step: Optional[Callable[[State, StepStats], None]] = None) -> Trajectory:
    """
    Initialize and advance N = T/dt steps.

    Args:
        mesh: Admissible mesh
        cfg: Scheme configuration
        on_step: Optional callback after each step (progress display)

    Returns:
        Trajectory with u^0..u^N, phi^0..phi^N and per-step statistics
    """
    cache = get_cache()
    tables = cache.geometry(mesh)
    require_admissible(mesh, tables)
    pair = cache.laplacians(mesh)
    N = cfg.N
    logger.info(f"Run: {mesh.n_cells} cells, N={N}, dt={cfg.dt:g}, solver={cfg.nonlinear_solver}")

    state = init_state(mesh, tables, pair, cfg)
    us = [state.u]
    phis = [state.phi]
    stats: List[StepStats] = []
    for _ in range(N):
        state, st = step(state, cfg, pair, tables)
        us.append(state.u)
        phis.append(state.phi)
        stats.append(st)
        logger.debug(f"Step {st.n}: {st.iterations} nonlinear its, residual {st.residual:.3e}, "
                     f"CG {st.linear_iterations}, clamped u/phi {st.clamped_u}/{st.clamped_phi}")
        if on_step is not None:
            on_step(state, st)

    traj = Trajectory(
        u=SpaceTimeField(tuple(us), cfg.dt, cfg.T),
        phi=SpaceTimeField(tuple(phis), cfg.dt, cfg.T),
        stats=tuple(stats),
        config=cfg,
        u_bar0=state.u_bar0,
    )
    total = sum(s.iterations for s in stats)
    logger.info(f"Run finished: {N} steps, {total} nonlinear iterations, "
                f"max u^N = {float(us[-1].values.max()) if len(us[-1]) else 0.0:.6g}")
    return traj


def mean_identity_defect(traj: Trajectory) -> List[float]:
    """|sum |K| phi^n - sum |K| (u^n)^4| for every step n."""
    mass = get_cache().geometry(traj.mesh).cell_volume
    return [abs(float(np.sum(mass * p.values)) - float(np.sum(mass * u.values ** 4)))
            for u, p in zip(traj.u.steps, traj.phi.steps)]


def bump(width: float = 1.0, height: float = 1.0) -> Callable:
    """max(0, 1 - 4 r^2 / R^2) centered in the rectangle, R a quarter of the shorter side."""
    cx, cy = width / 2.0, height / 2.0
    R = min(width, height) / 4.0

    def u0(x, y):
        return np.maximum(0.0, 1.0 - 4.0 * ((x - cx) ** 2 + (y - cy) ** 2) / R ** 2)
    return u0


def sine(width: float = 1.0, height: float = 1.0) -> Callable:
    """sin(pi x / width) sin(pi y / height)."""
    def u0(x, y):
        return np.sin(math.pi * x / width) * np.sin(math.pi * y / height)
    return u0
