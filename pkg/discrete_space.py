"""
Piecewise-constant discrete functions on a mesh, their discrete H1/L2/H-1
norms and the space-time norms of a trajectory.
"""
from dataclasses import dataclass
from typing import Callable, TextIO, Tuple
import csv
import logging
import math

import numpy as np

from assembly_cache import get_cache
from errors import FieldError
from linalg import solve_spd
from mesh import GeometryTables, Mesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CellField:
    """One finite value per cell of a mesh; immutable."""
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != (self.mesh.n_cells,):
            raise FieldError(f"field has shape {v.shape}, mesh has {self.mesh.n_cells} cells")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise FieldError(f"non-finite value {v[bad]} in cell {bad}")
        v.setflags(write=False)
        object.__setattr__(self, 'values', v)

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> 'CellField':
        return cls(mesh, np.full(mesh.n_cells, float(value)))

    @classmethod
    def zeros(cls, mesh: Mesh) -> 'CellField':
        return cls.constant(mesh, 0.0)

    def __len__(self):
        return len(self.values)

    def __add__(self, other: 'CellField') -> 'CellField':
        _check_same_mesh(self, other)
        return CellField(self.mesh, self.values + other.values)

    def __sub__(self, other: 'CellField') -> 'CellField':
        _check_same_mesh(self, other)
        return CellField(self.mesh, self.values - other.values)

    def __mul__(self, scalar: float) -> 'CellField':
        return CellField(self.mesh, float(scalar) * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> 'CellField':
        return CellField(self.mesh, -self.values)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Cell fields u^0 ... u^N on a uniform time grid of step dt."""
    steps: Tuple[CellField, ...]
    dt: float
    T: float

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, 'steps', steps)
        if not steps:
            raise FieldError("space-time field needs at least one step")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise FieldError(f"time step must be positive, got {self.dt}")
        n = len(steps) - 1
        if abs(n * self.dt - self.T) > 1e-12 * max(abs(self.T), self.dt):
            raise FieldError(f"{n} steps of {self.dt!r} do not reach T = {self.T!r}")
        mesh = steps[0].mesh
        for i, s in enumerate(steps):
            if not s.mesh.same_as(mesh):
                raise FieldError(f"step {i} lives on a different mesh")

    @property
    def N(self) -> int:
        return len(self.steps) - 1

    @property
    def mesh(self) -> Mesh:
        return self.steps[0].mesh

    def values(self) -> np.ndarray:
        """(N+1, nc) array of all step values."""
        return np.stack([s.values for s in self.steps])

    def time_derivative(self, n: int) -> CellField:
        """Forward difference (f^{n+1} - f^n)/dt, 0 <= n < N."""
        if not 0 <= n < self.N:
            raise FieldError(f"time derivative index {n} outside 0..{self.N - 1}")
        return CellField(self.mesh, (self.steps[n + 1].values - self.steps[n].values) / self.dt)


@dataclass(frozen=True)
class SpaceTimeNorms:
    l2_l2: float
    l2_l2_of_dt: float
    l2_h1: float
    l2_h1_semi: float
    l2_hminus1_of_dt: float
    linf_l2: float


def _check_same_mesh(u: CellField, v: CellField):
    if not u.mesh.same_as(v.mesh):
        raise FieldError("fields live on different meshes")


def _tables(u: CellField) -> GeometryTables:
    return get_cache().geometry(u.mesh)


def _face_split(mesh: Mesh, tables: GeometryTables):
    internal = mesh.internal_faces
    boundary = mesh.boundary_faces
    fc = mesh.face_cells
    return (fc[internal, 0], fc[internal, 1], tables.transmissibility[internal],
            fc[boundary, 0], tables.transmissibility[boundary])


def inner_dirichlet(u: CellField, v: CellField) -> float:
    """
    Discrete H1_0 inner product: internal jumps plus boundary values
    weighted by |sigma|/d_sigma.
    """
    _check_same_mesh(u, v)
    k, l, t_int, kb, t_bnd = _face_split(u.mesh, _tables(u))
    a, b = u.values, v.values
    return float(np.sum(t_int * (a[l] - a[k]) * (b[l] - b[k])) + np.sum(t_bnd * a[kb] * b[kb]))


def inner_neumann(u: CellField, v: CellField) -> float:
    """Internal-face part of inner_dirichlet; vanishes on constants."""
    _check_same_mesh(u, v)
    k, l, t_int, _, _ = _face_split(u.mesh, _tables(u))
    a, b = u.values, v.values
    return float(np.sum(t_int * (a[l] - a[k]) * (b[l] - b[k])))


def norm_1M(u: CellField) -> float:
    return math.sqrt(max(inner_dirichlet(u, u), 0.0))


def seminorm_1M(u: CellField) -> float:
    return math.sqrt(max(inner_neumann(u, u), 0.0))


def l2_inner(u: CellField, v: CellField) -> float:
    _check_same_mesh(u, v)
    return float(np.sum(_tables(u).cell_volume * u.values * v.values))


def l2_norm(u: CellField) -> float:
    return math.sqrt(l2_inner(u, u))


def dual_norm_minus1(u: CellField, cfg=None) -> float:
    """
    Discrete H-1 norm by Riesz representation.

    Solves A_D w = M u, so that <w, v>_{1,M} = (u, v) for every v, and
    returns ||w||_{1,M} = sqrt(w . A_D w).

    Args:
        u: Cell field
        cfg: Optional SolverConfig for the SPD solve

    Returns:
        sup_v (u, v)/||v||_{1,M}
    """
    if not np.any(u.values):
        return 0.0
    pair = get_cache().laplacians(u.mesh)
    w = solve_spd(pair.A_dirichlet, pair.mass * u.values, cfg)
    return math.sqrt(max(float(w @ (pair.A_dirichlet.matrix @ w)), 0.0))


def _subdivision_barycentric(levels: int) -> np.ndarray:
    """Barycentric centroids of the 4**levels congruent children of a triangle."""
    tris = [np.eye(3)]
    for _ in range(levels):
        children = []
        for t in tris:
            a, b, c = t
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            children.extend([np.array([a, ab, ca]), np.array([ab, b, bc]),
                             np.array([ca, bc, c]), np.array([ab, bc, ca])])
        tris = children
    return np.array([t.mean(axis=0) for t in tris])


_EDGE_MIDPOINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def quadrature_points(mesh: Mesh, rule: str = 'edge_midpoint', levels: int = 3) -> np.ndarray:
    """
    Equal-weight quadrature nodes per cell, shape (nc, q, 2).

    'edge_midpoint' is the three edge-midpoint rule (exact for quadratics);
    'subdivision' uses the centroids of 4**levels congruent children.
    """
    if rule == 'edge_midpoint':
        bary = _EDGE_MIDPOINTS
    elif rule == 'subdivision':
        bary = _subdivision_barycentric(levels)
    else:
        raise FieldError(f"unknown quadrature rule {rule!r}")
    corners = mesh.vertices[mesh.cells]  # (nc, 3, 2)
    return np.einsum('qj,kjd->kqd', bary, corners)


def project_initial(u0: Callable, mesh: Mesh, rule: str = 'edge_midpoint',
                    levels: int = 3) -> CellField:
    """
    Cell averages of a pointwise function.

    Args:
        u0: Vectorized function u0(x, y) of coordinate arrays
        mesh: Mesh
        rule: 'edge_midpoint' or 'subdivision'
        levels: Subdivision depth for the 'subdivision' rule

    Returns:
        CellField of approximate cell averages
    """
    pts = quadrature_points(mesh, rule, levels)
    vals = np.broadcast_to(np.asarray(u0(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    if not np.all(np.isfinite(vals)):
        raise FieldError("initial data is not finite at some quadrature node")
    return CellField(mesh, vals.mean(axis=1))


def spacetime_norms(f: SpaceTimeField, cfg=None) -> SpaceTimeNorms:
    """
    Discrete space-time norms of a trajectory.

    l2_l2 and l2_h1 sum over n = 0..N (N+1 terms times dt); the time
    derivative norms sum over n = 0..N-1.

    Raises:
        FieldError: fewer than two steps
    """
    if len(f.steps) < 2:
        raise FieldError("time-derivative norms need at least two steps")
    dt = f.dt
    l2 = [l2_norm(s) for s in f.steps]
    h1 = [norm_1M(s) for s in f.steps]
    semi = [seminorm_1M(s) for s in f.steps]
    derivatives = [f.time_derivative(n) for n in range(f.N)]
    dual = [dual_norm_minus1(d, cfg) for d in derivatives]
    l2_dt = [l2_norm(d) for d in derivatives]
    return SpaceTimeNorms(
        l2_l2=math.sqrt(dt * math.fsum(x * x for x in l2)),
        l2_l2_of_dt=math.sqrt(dt * math.fsum(x * x for x in l2_dt)),
        l2_h1=math.sqrt(dt * math.fsum(x * x for x in h1)),
        l2_h1_semi=math.sqrt(dt * math.fsum(x * x for x in semi)),
        l2_hminus1_of_dt=math.sqrt(dt * math.fsum(x * x for x in dual)),
        linf_l2=max(l2),
    )


def write_cell_field_csv(field: CellField, stream: TextIO):
    """One line `cell_index,value` per cell, values in round-trip precision."""
    writer = csv.writer(stream, lineterminator='\n')
    for k, v in enumerate(field.values):
        writer.writerow([k, repr(float(v))])


def read_cell_field_csv(stream: TextIO, mesh: Mesh) -> CellField:
    """
    Read a field written by write_cell_field_csv.

    Every cell index must appear exactly once; lines may come in any order.
    """
    values = np.full(mesh.n_cells, np.nan)
    seen = np.zeros(mesh.n_cells, dtype=bool)
    for lineno, row in enumerate(csv.reader(stream), start=1):
        if not row or not ''.join(row).strip():
            continue
        if len(row) != 2:
            raise FieldError(f"line {lineno}: expected 'cell_index,value'")
        try:
            k = int(row[0])
            v = float(row[1])
        except ValueError:
            raise FieldError(f"line {lineno}: cannot parse {','.join(row)!r}")
        if not 0 <= k < mesh.n_cells:
            raise FieldError(f"line {lineno}: cell index {k} outside 0..{mesh.n_cells - 1}")
        if seen[k]:
            raise FieldError(f"line {lineno}: cell {k} given twice")
        seen[k] = True
        values[k] = v
    if not seen.all():
        raise FieldError(f"missing value for cell {int(np.flatnonzero(~seen)[0])}")
    return CellField(mesh, values)
