"""
Numerical checks of the a priori estimates satisfied by the scheme:
maximum principle, energy bounds, time and space translates, the interval
identities behind the time-translate bound, and refinement studies.

Every check returns a report with a `passed` flag; nothing here raises on
a violated inequality.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import shapely
from shapely import STRtree

from assembly_cache import get_cache
from discrete_space import (CellField, SpaceTimeField, dual_norm_minus1, inner_dirichlet,
                            inner_neumann, l2_norm, norm_1M, seminorm_1M, spacetime_norms)
from errors import ConfigError
from manufactured import ManufacturedErrors, manufactured_errors
from mesh import Mesh, refine_uniform
from operators import StructureReport, flux_product, verify_structure
from scheme import SchemeConfig, Trajectory, mean_identity_defect, run
from utils import MAX_PRINCIPLE_REL, observed_order

logger = logging.getLogger(__name__)

NORM_KINDS = ('dirichlet_h1', 'l2')

# Slack of every energy inequality: absolute plus relative to the larger side
ENERGY_ABS_TOL = 1e-8
ENERGY_REL_TOL = 1e-10


def _holds(lhs: float, rhs: float) -> bool:
    return lhs <= rhs + ENERGY_ABS_TOL + ENERGY_REL_TOL * max(abs(lhs), abs(rhs))


# ---------------------------------------------------------------------------
# Maximum principle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepBounds:
    n: int
    min_u: float
    max_u: float
    min_phi: float
    max_phi: float
    u_ok: bool
    phi_ok: bool


@dataclass
class MaxPrincipleReport:
    steps: List[StepBounds]
    failures: List[str] = field(default_factory=list)
    applicable: bool = True
    passed: bool = True


def check_max_principle(traj: Trajectory, tol: float = MAX_PRINCIPLE_REL) -> MaxPrincipleReport:
    """
    Per-step check of 0 <= u^n <= max u^{n-1} and 0 <= phi^n <= (max u^n)^4.

    Violations are located by step and cell. With manufactured sources the
    bounds do not apply and the report passes with applicable=False.
    """
    applicable = traj.config.manufactured is None
    scale_u = max(traj.u_bar0, 0.0)
    report = MaxPrincipleReport(steps=[], applicable=applicable)
    prev_max = None
    for n, (u, phi) in enumerate(zip(traj.u.steps, traj.phi.steps)):
        uv, pv = u.values, phi.values
        max_u = float(uv.max())
        floor_u = -tol * scale_u
        floor_phi = -tol * scale_u ** 4
        u_ok = bool(uv.min() >= floor_u)
        if not u_ok:
            cell = int(np.argmin(uv))
            report.failures.append(f"step {n}, cell {cell}: u = {uv[cell]:.6e} < 0")
        if prev_max is not None and max_u > prev_max * (1.0 + tol) + tol * scale_u:
            u_ok = False
            cell = int(np.argmax(uv))
            report.failures.append(f"step {n}, cell {cell}: u = {uv[cell]:.6e} exceeds max u^{n - 1} = {prev_max:.6e}")
        cap = max(max_u, 0.0) ** 4
        phi_ok = bool(pv.min() >= floor_phi)
        if not phi_ok:
            cell = int(np.argmin(pv))
            report.failures.append(f"step {n}, cell {cell}: phi = {pv[cell]:.6e} < 0")
        if pv.max() > cap * (1.0 + tol) + tol * scale_u ** 4:
            phi_ok = False
            cell = int(np.argmax(pv))
            report.failures.append(f"step {n}, cell {cell}: phi = {pv[cell]:.6e} exceeds (max u^{n})^4 = {cap:.6e}")
        report.steps.append(StepBounds(n=n, min_u=float(uv.min()), max_u=max_u,
                                       min_phi=float(pv.min()), max_phi=float(pv.max()),
                                       u_ok=u_ok, phi_ok=phi_ok))
        prev_max = max_u
    report.passed = (not applicable) or not report.failures
    if report.failures:
        logger.warning(f"Maximum principle: {len(report.failures)} violations, first: {report.failures[0]}")
    return report


# ---------------------------------------------------------------------------
# Energy estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InequalityCheck:
    name: str
    n: int
    lhs: float
    rhs: float
    ok: bool


@dataclass
class EnergyReport:
    l2_h1_u: float
    hminus1_dt_u: float
    l2_phi: float
    l2_h1_semi_phi: float
    l2_dt_phi: float
    area: float
    diameter: float
    T: float
    u_bar0: float
    norm_1M_u0: float
    checks: List[InequalityCheck] = field(default_factory=list)
    applicable: bool = True
    passed: bool = True

    @property
    def terms(self) -> Tuple[float, float, float, float, float]:
        return (self.l2_h1_u, self.hminus1_dt_u, self.l2_phi, self.l2_h1_semi_phi, self.l2_dt_phi)

    def failures(self) -> List[InequalityCheck]:
        return [c for c in self.checks if not c.ok]


def energy_budget(traj: Trajectory, cfg=None) -> EnergyReport:
    """
    The five energy terms and the step inequalities they follow from.

    Terms: ||u||_{L2(H1)}, ||d_t u||_{L2(H-1)}, ||phi||_{L2(L2)},
    |phi|_{L2(H1)}, ||d_t phi||_{L2(L2)}. Per-step checks (u_bar0 = max u^0):

        energy:      ||u^{n+1}||^2 - ||u^n||^2 + dt |u^{n+1}|_1^2 <= dt |O| diam^2 u_bar0^8
        summed:      ||u^N||^2 + dt sum_{n>=1} |u^n|_1^2 <= T |O| diam^2 u_bar0^8 + ||u^0||^2
        dual_dt:     ||d_t u^n||_{-1} <= |u^{n+1}|_1 + u_bar0^4 |O|^(1/2) diam
        phi_bound:   ||phi^n||^2 / 2 + |phi^n|_N^2 <= |O| u_bar0^8 / 2
        dt_energy:   ||d_t u^n||^2 + (|u^{n+1}|_1^2 - |u^n|_1^2)/dt <= |O| u_bar0^8
        dt_phi:      ||d_t phi^n|| <= 4 u_bar0^3 ||d_t u^n||

    Args:
        traj: Complete trajectory
        cfg: Optional SolverConfig for the H-1 solves
    """
    mesh = traj.mesh
    tables = get_cache().geometry(mesh)
    area, diam, dt, T = tables.area, tables.diameter, traj.u.dt, traj.u.T
    ub = traj.u_bar0
    nu = spacetime_norms(traj.u, cfg)
    phi_steps = traj.phi.steps
    h1_semi_phi = math.sqrt(dt * math.fsum(seminorm_1M(p) ** 2 for p in phi_steps))
    l2_phi = math.sqrt(dt * math.fsum(l2_norm(p) ** 2 for p in phi_steps))
    dphi = [traj.phi.time_derivative(n) for n in range(traj.phi.N)]
    l2_dt_phi = math.sqrt(dt * math.fsum(l2_norm(d) ** 2 for d in dphi))

    report = EnergyReport(
        l2_h1_u=nu.l2_h1,
        hminus1_dt_u=nu.l2_hminus1_of_dt,
        l2_phi=l2_phi,
        l2_h1_semi_phi=h1_semi_phi,
        l2_dt_phi=l2_dt_phi,
        area=area,
        diameter=diam,
        T=T,
        u_bar0=ub,
        norm_1M_u0=norm_1M(traj.u.steps[0]),
        applicable=traj.config.manufactured is None,
    )
    if not report.applicable:
        logger.info("Energy inequalities skipped: manufactured sources enabled")
        return report

    steps = traj.u.steps
    l2 = [l2_norm(s) for s in steps]
    h1 = [norm_1M(s) for s in steps]
    checks = report.checks
    for n in range(traj.u.N):
        du = traj.u.time_derivative(n)
        l2_du = l2_norm(du)
        lhs = l2[n + 1] ** 2 - l2[n] ** 2 + dt * h1[n + 1] ** 2
        rhs = dt * area * diam ** 2 * ub ** 8
        checks.append(InequalityCheck('energy', n, lhs, rhs, _holds(lhs, rhs)))
        lhs = dual_norm_minus1(du, cfg)
        rhs = h1[n + 1] + ub ** 4 * math.sqrt(area) * diam
        checks.append(InequalityCheck('dual_dt', n, lhs, rhs, _holds(lhs, rhs)))
        lhs = l2_du ** 2 + (h1[n + 1] ** 2 - h1[n] ** 2) / dt
        rhs = area * ub ** 8
        checks.append(InequalityCheck('dt_energy', n, lhs, rhs, _holds(lhs, rhs)))
        lhs = l2_norm(dphi[n])
        rhs = 4.0 * ub ** 3 * l2_du
        checks.append(InequalityCheck('dt_phi', n, lhs, rhs, _holds(lhs, rhs)))
    for n, p in enumerate(phi_steps):
        lhs = 0.5 * l2_norm(p) ** 2 + seminorm_1M(p) ** 2
        rhs = 0.5 * area * ub ** 8
        checks.append(InequalityCheck('phi_bound', n, lhs, rhs, _holds(lhs, rhs)))
    lhs = l2[-1] ** 2 + dt * math.fsum(x * x for x in h1[1:])
    rhs = T * area * diam ** 2 * ub ** 8 + l2[0] ** 2
    checks.append(InequalityCheck('summed', traj.u.N, lhs, rhs, _holds(lhs, rhs)))

    report.passed = not report.failures()
    if not report.passed:
        first = report.failures()[0]
        logger.warning(f"Energy check {first.name} failed at step {first.n}: {first.lhs:.6e} > {first.rhs:.6e}")
    return report


# ---------------------------------------------------------------------------
# Time translates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TranslateReport:
    tau: float
    lhs: float
    rhs: float
    norm_kind: str
    passed: bool


def _time_index(t: np.ndarray, dt: float, N: int) -> np.ndarray:
    """Interval index n with t in [t^n, t^{n+1}), or -1 outside [0, T)."""
    idx = np.floor(t / dt).astype(np.int64)
    return np.where((idx >= 0) & (idx < N), idx, -1)


def time_translate_lhs(f: SpaceTimeField, tau: float) -> float:
    """
    Exact integral over the real line of ||f(., t + tau) - f(., t)||^2_{L2}.

    f(., t) = f^n on [t^n, t^{n+1}) for n < N and zero outside [0, T); the
    integrand is constant between consecutive points of
    {t^n} U {t^n - tau}, so the integral is a finite sum of interval lengths
    times Gram-matrix combinations.
    """
    tau = abs(float(tau))
    if tau == 0.0 or f.N == 0:
        return 0.0
    dt, N = f.dt, f.N
    mass = get_cache().geometry(f.mesh).cell_volume
    U = np.stack([s.values for s in f.steps[:N]])
    gram = (U * mass) @ U.T
    diag = np.diag(gram)

    grid = np.arange(N + 1) * dt
    pts = np.unique(np.concatenate([grid, grid - tau]))
    lengths = np.diff(pts)
    mids = 0.5 * (pts[:-1] + pts[1:])
    a = _time_index(mids + tau, dt, N)
    b = _time_index(mids, dt, N)
    aa = np.where(a >= 0, diag[np.maximum(a, 0)], 0.0)
    bb = np.where(b >= 0, diag[np.maximum(b, 0)], 0.0)
    ab = np.where((a >= 0) & (b >= 0), gram[np.maximum(a, 0), np.maximum(b, 0)], 0.0)
    sq = np.maximum(aa + bb - 2.0 * ab, 0.0)
    keep = lengths > 0
    return math.fsum((lengths * sq)[keep])


def translate_bracket(f: SpaceTimeField, norm_kind: str = 'l2', cfg=None) -> float:
    """2 ||f||^2_{L2(s)} + ||d_t f||*^2 / 2 + 2 ||f||^2_{Linf(L2)}, independent of tau."""
    if norm_kind not in NORM_KINDS:
        raise ValueError(f"norm_kind must be one of {NORM_KINDS}, got {norm_kind!r}")
    dt = f.dt
    if norm_kind == 'dirichlet_h1':
        s_norm, dual = norm_1M, (lambda w: dual_norm_minus1(w, cfg))
    else:
        s_norm, dual = l2_norm, l2_norm
    l2s = dt * math.fsum(s_norm(s) ** 2 for s in f.steps)
    dual_sq = dt * math.fsum(dual(f.time_derivative(n)) ** 2 for n in range(f.N))
    linf = max(l2_norm(s) for s in f.steps) ** 2
    return 2.0 * l2s + 0.5 * dual_sq + 2.0 * linf


def time_translate_sq(f: SpaceTimeField, tau: float, norm_kind: str = 'l2', cfg=None,
                      bracket: Optional[float] = None) -> TranslateReport:
    """
    Time-translate estimate

        lhs <= |tau| [2 ||f||^2_{L2(s)} + ||d_t f||*^2 / 2 + 2 ||f||^2_{Linf(L2)}]

    with ||.||_s the discrete H1_0 norm (dual: H-1) or the L2 norm (self-dual),
    ||f||^2_{L2(s)} = dt sum_{n=0..N} ||f^n||_s^2 and the dual term summed over n < N.
    Negative tau is handled through |tau|.
    """
    if bracket is None:
        bracket = translate_bracket(f, norm_kind, cfg)
    elif norm_kind not in NORM_KINDS:
        raise ValueError(f"norm_kind must be one of {NORM_KINDS}, got {norm_kind!r}")
    tau_abs = abs(float(tau))
    lhs = time_translate_lhs(f, tau_abs)
    rhs = tau_abs * bracket
    passed = lhs <= rhs * (1.0 + 1e-12) + 1e-300
    if not passed:
        logger.warning(f"Time translate tau={tau:g} ({norm_kind}): {lhs:.6e} > {rhs:.6e}")
    return TranslateReport(tau=float(tau), lhs=lhs, rhs=rhs, norm_kind=norm_kind, passed=passed)


# ---------------------------------------------------------------------------
# Interval identities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChiReport:
    integral: float
    expected: float
    integral_exact: bool
    window_max: float
    window_bound_ok: bool

    @property
    def passed(self) -> bool:
        return self.integral_exact and self.window_bound_ok


def chi_identities(N: int, dt: float, tau: float, alphas: Sequence[float],
                   sweep: int = 1000) -> ChiReport:
    """
    chi^n is the indicator of [t^n - tau, t^n), n = 1..N.

    Integrates sum_n alpha_n chi^n over the real line by summing the
    contributions of the elementary intervals cut by all breakpoints, and
    compares with tau * sum alpha_n; also checks that any window of length
    dt meets at most tau of sum_n chi^n, on `sweep` window positions.
    """
    if not (tau > 0 and dt > 0):
        raise ValueError(f"tau and dt must be positive, got tau={tau}, dt={dt}")
    alphas = [float(a) for a in alphas]
    if len(alphas) != N:
        raise ValueError(f"expected {N} coefficients, got {len(alphas)}")
    starts = [n * dt - tau for n in range(1, N + 1)]
    ends = [n * dt for n in range(1, N + 1)]
    pts = sorted(set(starts) | set(ends))
    pieces = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (lo + hi)
        for s, e, a in zip(starts, ends, alphas):
            if s <= mid < e:
                pieces.append(a * (hi - lo))
    integral = math.fsum(pieces)
    expected = tau * math.fsum(alphas)
    T = N * dt
    tol = 1e-14 * max(1.0, math.fsum(abs(a) for a in alphas) * max(tau, T))
    exact = abs(integral - expected) <= tol

    window_max = 0.0
    for t in np.linspace(-tau - dt, T + dt, sweep):
        covered = math.fsum(max(0.0, min(t + dt, e) - max(t, s)) for s, e in zip(starts, ends))
        window_max = max(window_max, covered)
    window_ok = window_max <= tau * (1.0 + 1e-12)
    return ChiReport(integral=integral, expected=expected, integral_exact=exact,
                     window_max=window_max, window_bound_ok=window_ok)


# ---------------------------------------------------------------------------
# Space translates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpaceTranslateReport:
    eta: Tuple[float, float]
    lhs: float
    bound_dirichlet: float
    bound_neumann: float
    c_omega: float
    c_min: float
    dirichlet_ok: bool
    neumann_ok: bool

    @property
    def passed(self) -> bool:
        return self.neumann_ok


def _cell_polygons(mesh: Mesh, shift=(0.0, 0.0)):
    coords = mesh.vertices[mesh.cells] - np.asarray(shift, dtype=float)
    closed = np.concatenate([coords, coords[:, :1]], axis=1)
    return shapely.polygons(closed)


def space_translate_lhs(v: CellField, eta) -> float:
    """
    ||v(. + eta) - v||^2 over the plane for v extended by zero:
    2 sum |K| v_K^2 - 2 sum_{K,L} v_K v_L |K n (L - eta)|, by exact polygon overlay.
    """
    eta = np.asarray(eta, dtype=float)
    if not np.any(eta):
        return 0.0
    mesh = v.mesh
    mass = get_cache().geometry(mesh).cell_volume
    cells = _cell_polygons(mesh)
    shifted = _cell_polygons(mesh, eta)
    tree = STRtree(cells)
    l_idx, k_idx = tree.query(shifted, predicate='intersects')
    overlap = shapely.area(shapely.intersection(shifted[l_idx], cells[k_idx]))
    vals = v.values
    cross = math.fsum(vals[k_idx] * vals[l_idx] * overlap)
    self_sq = math.fsum(mass * vals ** 2)
    return max(2.0 * self_sq - 2.0 * cross, 0.0)


def space_translate_sq(v: CellField, eta) -> SpaceTranslateReport:
    """
    Space-translate estimates for a field extended by zero outside the domain:

        lhs <= |v|_1^2 |eta| (|eta| + c h)                        (informative)
        lhs <= |eta| [|v|_N^2 (|eta| + 2h) + 2 |dO| ||v||_inf^2]   (asserted)

    with c = 4 |dO| / min(1, h); c_min is the smallest c for which the first
    bound holds.
    """
    eta = np.asarray(eta, dtype=float)
    norm_eta = float(np.hypot(eta[0], eta[1]))
    tables = get_cache().geometry(v.mesh)
    h = tables.h
    c_omega = 4.0 * tables.perimeter / min(1.0, h)
    if norm_eta == 0.0:
        return SpaceTranslateReport(eta=(0.0, 0.0), lhs=0.0, bound_dirichlet=0.0, bound_neumann=0.0,
                                    c_omega=c_omega, c_min=0.0, dirichlet_ok=True, neumann_ok=True)
    lhs = space_translate_lhs(v, eta)
    h1_sq = inner_dirichlet(v, v)
    semi_sq = inner_neumann(v, v)
    sup = float(np.max(np.abs(v.values)))
    bound_d = h1_sq * norm_eta * (norm_eta + c_omega * h)
    bound_n = norm_eta * (semi_sq * (norm_eta + 2.0 * h) + 2.0 * tables.perimeter * sup ** 2)
    if h1_sq > 0:
        c_min = max(0.0, (lhs / (h1_sq * norm_eta) - norm_eta) / h)
    else:
        c_min = 0.0
    slack = 1e-12 * max(lhs, 1e-300)
    report = SpaceTranslateReport(
        eta=(float(eta[0]), float(eta[1])),
        lhs=lhs,
        bound_dirichlet=bound_d,
        bound_neumann=bound_n,
        c_omega=c_omega,
        c_min=c_min,
        dirichlet_ok=lhs <= bound_d + slack,
        neumann_ok=lhs <= bound_n + slack,
    )
    if not report.neumann_ok:
        logger.warning(f"Space translate |eta|={norm_eta:.3g}: {lhs:.6e} > {bound_n:.6e}")
    return report


# ---------------------------------------------------------------------------
# Operator identities
# ---------------------------------------------------------------------------

@dataclass
class OperatorReport:
    samples: int
    adjoint_dirichlet: float      # max relative |psi.A_D psi - <psi,psi>_1|
    adjoint_neumann: float
    norm_split: float             # max relative defect of |u|_1^2 = |u|_N^2 + boundary part
    neumann_constant: float       # max |A_N 1|, exactly 0 in flux form
    telescoping: float            # max |sum_K |K| (Delta_N psi)_K| relative
    poincare_ok: bool
    structure: StructureReport
    passed: bool = False


def verify_operators(mesh: Mesh, samples: int = 1000, seed: int = 0, dt: float = 1.0) -> OperatorReport:
    """
    Adjointness, kernel, telescoping, Poincare and M-matrix checks on
    random fields.
    """
    cache = get_cache()
    tables = cache.geometry(mesh)
    pair = cache.laplacians(mesh)
    rng = np.random.default_rng(seed)
    A_d = pair.A_dirichlet.matrix
    A_n = pair.A_neumann.matrix
    diam = tables.diameter
    adj_d = adj_n = split = tele = 0.0
    poincare = True
    boundary_k, boundary_t = pair.boundary_k, pair.boundary_t
    for _ in range(samples):
        psi = rng.standard_normal(mesh.n_cells)
        field_ = CellField(mesh, psi)
        qd = float(psi @ (A_d @ psi))
        qn = float(psi @ (A_n @ psi))
        idd = inner_dirichlet(field_, field_)
        inn = inner_neumann(field_, field_)
        adj_d = max(adj_d, abs(qd - idd) / max(abs(qd), 1e-300))
        adj_n = max(adj_n, abs(qn - inn) / max(abs(qn), 1e-300) if qn else abs(inn))
        bnd = float(np.sum(boundary_t * psi[boundary_k] ** 2))
        split = max(split, abs(idd - inn - bnd) / max(idd, 1e-300))
        lap_n = flux_product(pair, psi, False)
        tele = max(tele, abs(float(np.sum(lap_n))) / max(float(np.sum(np.abs(lap_n))), 1e-300))
        if l2_norm(field_) > diam * math.sqrt(max(idd, 0.0)) * (1.0 + 1e-12):
            poincare = False
    const = float(np.max(np.abs(flux_product(pair, np.ones(mesh.n_cells), False))))
    structure = verify_structure(pair, dt)
    report = OperatorReport(samples=samples, adjoint_dirichlet=adj_d, adjoint_neumann=adj_n,
                            norm_split=split, neumann_constant=const, telescoping=tele,
                            poincare_ok=poincare, structure=structure)
    report.passed = (adj_d <= 1e-12 and adj_n <= 1e-12 and split <= 1e-12 and const == 0.0
                     and tele <= 1e-12 and poincare and structure.passed)
    return report


# ---------------------------------------------------------------------------
# Refinement studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelResult:
    level: int
    cells: int
    h: float
    dt: float
    steps: int
    cauchy_u: float = float('nan')
    cauchy_phi: float = float('nan')
    rate_u: float = float('nan')
    rate_phi: float = float('nan')
    error_u: float = float('nan')
    error_phi: float = float('nan')
    order_u: float = float('nan')
    order_phi: float = float('nan')


@dataclass
class ConvergenceTable:
    rows: List[LevelResult]
    manufactured: bool = False

    def cauchy_decreasing(self) -> bool:
        diffs = [r.cauchy_u for r in self.rows[1:]]
        return all(b < a for a, b in zip(diffs, diffs[1:]))


def injected_l2_difference(coarse: SpaceTimeField, fine: SpaceTimeField,
                           parents: np.ndarray) -> float:
    """
    ||f_c - f_f||_{L2((0,T) x O)} of the piecewise-constant time functions,
    with coarse cell values copied onto their children and coarse interval n
    covering fine intervals 2n and 2n+1.
    """
    mass = get_cache().geometry(fine.mesh).cell_volume
    dt_f = fine.dt
    total = []
    for j in range(fine.N):
        diff = coarse.steps[j // 2].values[parents] - fine.steps[j].values
        total.append(dt_f * float(np.sum(mass * diff ** 2)))
    return math.sqrt(math.fsum(total))


def convergence_study(base_mesh: Mesh, cfg: SchemeConfig, levels: int, parallel: bool = False,
                      on_level: Optional[Callable[[int, Trajectory], None]] = None) -> ConvergenceTable:
    """
    Run the scheme on `levels` nested uniform refinements with dt halved at
    each level and tabulate Cauchy differences between consecutive levels.

    Args:
        base_mesh: Coarsest mesh
        cfg: Scheme configuration of the coarsest level
        levels: Number of levels (>= 2)
        parallel: Run levels in a thread pool
        on_level: Optional callback after each level finishes

    Returns:
        ConvergenceTable (rows of levels 1.. carry differences with the previous level)
    """
    if levels < 2:
        raise ConfigError(f"need at least 2 levels, got {levels}", key='levels')
    if isinstance(cfg.u0, CellField):
        raise ConfigError("per-cell initial data cannot be carried to refined meshes", key='u0_csv')

    meshes = [base_mesh]
    for _ in range(levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    configs = [replace(cfg, dt=cfg.dt / 2 ** m) for m in range(levels)]

    def solve(m):
        logger.info(f"Convergence level {m}: {meshes[m].n_cells} cells, dt={configs[m].dt:g}")
        traj = run(meshes[m], configs[m])
        if on_level is not None:
            on_level(m, traj)
        return traj

    if parallel:
        with ThreadPoolExecutor(max_workers=levels) as pool:
            trajectories = list(pool.map(solve, range(levels)))
    else:
        trajectories = [solve(m) for m in range(levels)]

    errors: List[Optional[ManufacturedErrors]] = [None] * levels
    if cfg.manufactured is not None:
        errors = [manufactured_errors(t, cfg.manufactured) for t in trajectories]

    rows = []
    for m, (mesh, traj) in enumerate(zip(meshes, trajectories)):
        values = dict(level=m, cells=mesh.n_cells, h=get_cache().geometry(mesh).h,
                      dt=configs[m].dt, steps=configs[m].N)
        if m > 0:
            cu = injected_l2_difference(trajectories[m - 1].u, traj.u, mesh.parent_cells)
            cp = injected_l2_difference(trajectories[m - 1].phi, traj.phi, mesh.parent_cells)
            values.update(cauchy_u=cu, cauchy_phi=cp)
            if m > 1:
                values.update(rate_u=observed_order(rows[-1].cauchy_u, cu),
                              rate_phi=observed_order(rows[-1].cauchy_phi, cp))
        if errors[m] is not None:
            values.update(error_u=errors[m].l2_l2_u, error_phi=errors[m].l2_l2_phi)
            if m > 0:
                values.update(order_u=observed_order(errors[m - 1].l2_l2_u, errors[m].l2_l2_u),
                              order_phi=observed_order(errors[m - 1].l2_l2_phi, errors[m].l2_l2_phi))
        rows.append(LevelResult(**values))
    return ConvergenceTable(rows=rows, manufactured=cfg.manufactured is not None)


# ---------------------------------------------------------------------------
# Aggregate
# ---------------------------------------------------------------------------

DIAGNOSTICS = ('max_principle', 'energy', 'translates', 'chi', 'operators')


@dataclass
class RunReport:
    trajectory: Trajectory
    max_principle: Optional[MaxPrincipleReport] = None
    energy: Optional[EnergyReport] = None
    translates: List[TranslateReport] = field(default_factory=list)
    space_translates: List[SpaceTranslateReport] = field(default_factory=list)
    chi: Optional[ChiReport] = None
    operators: Optional[OperatorReport] = None
    mean_defect: List[float] = field(default_factory=list)
    mean_ok: bool = True
    errors: Optional[ManufacturedErrors] = None

    @property
    def passed(self) -> bool:
        parts = [self.max_principle, self.energy, self.chi, self.operators]
        return (all(p.passed for p in parts if p is not None)
                and all(t.passed for t in self.translates)
                and all(s.passed for s in self.space_translates) and self.mean_ok)


def translate_taus(dt: float, T: float) -> Tuple[float, ...]:
    return (dt / 2.0, dt, 3.7 * dt, T / 3.0)


def translate_etas(h: float, diameter: float) -> Tuple[Tuple[float, float], ...]:
    return ((0.5 * h, 0.0), (0.0, h), (0.3 * h, 2.1 * h), (diameter / 5.0, diameter / 7.0))


def run_diagnostics(traj: Trajectory, selection: Sequence[str] = DIAGNOSTICS, cfg=None,
                    samples: int = 1000, seed: int = 0) -> RunReport:
    """
    Evaluate the selected diagnostics on a trajectory.

    Args:
        traj: Complete trajectory
        selection: Subset of DIAGNOSTICS
        cfg: Optional SolverConfig for H-1 solves
        samples: Random fields for the operator checks
        seed: Seed of every random draw
    """
    unknown = set(selection) - set(DIAGNOSTICS)
    if unknown:
        raise ConfigError(f"unknown diagnostics {sorted(unknown)}", key='diagnostics')
    report = RunReport(trajectory=traj)
    dt, T, N = traj.u.dt, traj.u.T, traj.u.N

    if traj.config.manufactured is None:
        report.mean_defect = mean_identity_defect(traj)
        mass = get_cache().geometry(traj.mesh).cell_volume
        scale = [float(np.sum(mass * u.values ** 4)) for u in traj.u.steps]
        # The defect is the sum of the CG residual, at most sqrt(n) times its 2-norm
        rel = max(1e-10, 2.0 * math.sqrt(traj.mesh.n_cells) * traj.config.linear.rel_tol)
        report.mean_ok = all(d <= rel * s for d, s in zip(report.mean_defect, scale))
    else:
        report.errors = manufactured_errors(traj, traj.config.manufactured)

    if 'max_principle' in selection:
        report.max_principle = check_max_principle(traj)
    if 'energy' in selection:
        report.energy = energy_budget(traj, cfg)
    if 'translates' in selection:
        bracket_u = translate_bracket(traj.u, 'dirichlet_h1', cfg)
        bracket_phi = translate_bracket(traj.phi, 'l2', cfg)
        for tau in translate_taus(dt, T):
            report.translates.append(time_translate_sq(traj.u, tau, 'dirichlet_h1', bracket=bracket_u))
            report.translates.append(time_translate_sq(traj.phi, tau, 'l2', bracket=bracket_phi))
        tables = get_cache().geometry(traj.mesh)
        for eta in translate_etas(tables.h, tables.diameter):
            report.space_translates.append(space_translate_sq(traj.u.steps[-1], eta))
    if 'chi' in selection and N > 0:
        rng = np.random.default_rng(seed)
        report.chi = chi_identities(N, dt, float(rng.uniform(0.0, T)), rng.standard_normal(N))
    if 'operators' in selection:
        report.operators = verify_operators(traj.mesh, samples=samples, seed=seed, dt=dt)
    logger.info(f"Diagnostics {', '.join(selection)}: {'PASS' if report.passed else 'FAIL'}")
    return report
