"""
Conforming triangular meshes: loading, geometry and two-point flux admissibility.

A mesh is admissible when every circumcenter x_K lies in its (closed) cell and
every face distance d_sigma is strictly positive, so that the segment
[x_K, x_L] is orthogonal to the face K|L and the transmissibility
|sigma|/d_sigma is finite.
"""
from dataclasses import dataclass, field
from typing import Optional, TextIO, Tuple
import logging

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from errors import (AdmissibilityError, DegenerateCellError, MeshParseError,
                    MeshTopologyError)
from utils import EPS_GEOM_REL, INSIDE_TOL_REL, SQRT3, fingerprint, freeze

logger = logging.getLogger(__name__)

# Local edge i of a cell joins vertex i to vertex (i + 1) % 3
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming 2D triangulation with enumerated faces."""
    vertices: np.ndarray        # (nv, 2)
    cells: np.ndarray           # (nc, 3), counterclockwise
    face_vertices: np.ndarray   # (nf, 2), sorted vertex pair
    face_cells: np.ndarray      # (nf, 2), second entry -1 on the boundary
    cell_faces: np.ndarray      # (nc, 3), face of local edge i
    parent_cells: Optional[np.ndarray] = None
    key: str = field(default='', repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @property
    def internal_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    def same_as(self, other: 'Mesh') -> bool:
        return self is other or self.key == other.key


@dataclass(frozen=True, eq=False)
class GeometryTables:
    """Per-cell and per-face geometry of a mesh."""
    cell_volume: np.ndarray       # |K|
    circumcenter: np.ndarray      # x_K, (nc, 2)
    cell_diameter: np.ndarray     # h_K
    inradius: np.ndarray          # rho_K
    face_measure: np.ndarray      # |sigma|
    d_sigma: np.ndarray
    transmissibility: np.ndarray  # |sigma| / d_sigma
    face_eps: np.ndarray          # eps_geom per face
    theta_M: float
    area: float                   # |Omega| by the boundary shoelace formula
    perimeter: float              # |dOmega|
    diameter: float               # diam(Omega)
    h: float                      # max cell diameter


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    circumcenter_inside: np.ndarray    # per cell, closed cell with tolerance
    circumcenter_interior: np.ndarray  # per cell, strictly interior
    distances_ok: np.ndarray           # per cell, all incident d_sigma > eps
    bad_cells: Tuple[int, ...]
    bad_faces: Tuple[int, ...]
    min_relative_distance: float       # min d_sigma / h_K
    theta_M: float
    eps_rel: float


def _triangle_signed_areas(vertices, cells):
    a = vertices[cells[:, 0]]
    b = vertices[cells[:, 1]]
    c = vertices[cells[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _cell_diameters(vertices, cells):
    p = vertices[cells]
    lengths = np.stack([np.linalg.norm(p[:, j] - p[:, i], axis=1) for i, j in _LOCAL_EDGES], axis=1)
    return lengths


def make_mesh(vertices, cells, parent_cells=None) -> Mesh:
    """
    Validate a triangulation and enumerate its faces.

    Args:
        vertices: (nv, 2) coordinates
        cells: (nc, 3) vertex indices, counterclockwise
        parent_cells: optional parent index per cell (set by refine_uniform)

    Returns:
        Immutable Mesh

    Raises:
        MeshTopologyError: bad indices, duplicate cell, inverted orientation,
            face shared by more than two cells or hanging node
        DegenerateCellError: zero-area cell
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshTopologyError(f"vertices must be an (nv, 2) array, got shape {vertices.shape}")
    if cells.ndim != 2 or cells.shape[1] != 3 or len(cells) == 0:
        raise MeshTopologyError(f"cells must be a non-empty (nc, 3) array, got shape {cells.shape}")
    if not np.all(np.isfinite(vertices)):
        raise MeshTopologyError("vertex coordinates must be finite")
    if cells.min() < 0 or cells.max() >= len(vertices):
        raise MeshTopologyError("cell references a vertex index out of range")

    for k, tri in enumerate(cells):
        if len(set(tri.tolist())) != 3:
            raise MeshTopologyError(f"cell {k} repeats a vertex: {tri.tolist()}")

    areas = _triangle_signed_areas(vertices, cells)
    diam = _cell_diameters(vertices, cells).max(axis=1)
    tiny = 1e-14 * diam ** 2
    degenerate = np.flatnonzero(np.abs(areas) <= tiny)
    if degenerate.size:
        raise DegenerateCellError(f"cell {degenerate[0]} has collinear vertices")
    inverted = np.flatnonzero(areas < 0)
    if inverted.size:
        raise MeshTopologyError(f"cell {inverted[0]} has inverted (clockwise) orientation")

    seen = {}
    for k, tri in enumerate(cells):
        key = tuple(sorted(tri.tolist()))
        if key in seen:
            raise MeshTopologyError(f"cell {k} duplicates cell {seen[key]}")
        seen[key] = k

    # Faces numbered in order of first appearance (cells in order, local edges in order)
    face_index = {}
    face_vertices = []
    face_cells = []
    face_direction = []
    cell_faces = np.empty((len(cells), 3), dtype=np.int64)
    for k, tri in enumerate(cells):
        for e, (i, j) in enumerate(_LOCAL_EDGES):
            a, b = int(tri[i]), int(tri[j])
            key = (a, b) if a < b else (b, a)
            f = face_index.get(key)
            if f is None:
                f = len(face_vertices)
                face_index[key] = f
                face_vertices.append(key)
                face_cells.append([k, -1])
                face_direction.append(a < b)
            else:
                if face_cells[f][1] >= 0:
                    raise MeshTopologyError(
                        f"face {key} is shared by more than two cells "
                        f"({face_cells[f][0]}, {face_cells[f][1]}, {k})")
                if face_direction[f] == (a < b):
                    raise MeshTopologyError(
                        f"cells {face_cells[f][0]} and {k} overlap across face {key}")
                face_cells[f][1] = k
            cell_faces[k, e] = f

    face_vertices = np.array(face_vertices, dtype=np.int64)
    face_cells = np.array(face_cells, dtype=np.int64)
    _check_hanging_nodes(vertices, face_vertices, face_cells)

    if parent_cells is not None:
        parent_cells = freeze(np.asarray(parent_cells, dtype=np.int64))

    v = freeze(vertices)
    c = freeze(cells)
    return Mesh(
        vertices=v,
        cells=c,
        face_vertices=freeze(face_vertices),
        face_cells=freeze(face_cells),
        cell_faces=freeze(cell_faces),
        parent_cells=parent_cells,
        key=fingerprint(v, c),
    )


def _check_hanging_nodes(vertices, face_vertices, face_cells):
    """A vertex strictly inside a boundary face means a non-conforming junction."""
    bnd = face_cells[:, 1] < 0
    fv = face_vertices[bnd]
    if len(fv) == 0:
        return
    candidates = np.unique(fv)
    p = vertices[candidates]
    a = vertices[fv[:, 0]]
    b = vertices[fv[:, 1]]
    for f in range(len(fv)):
        t = b[f] - a[f]
        length2 = t @ t
        rel = p - a[f]
        s = rel @ t / length2
        cross = t[0] * rel[:, 1] - t[1] * rel[:, 0]
        on_line = np.abs(cross) <= 1e-12 * length2
        inside = (s > 1e-12) & (s < 1.0 - 1e-12)
        hit = np.flatnonzero(on_line & inside)
        if hit.size:
            raise MeshTopologyError(
                f"hanging node: vertex {candidates[hit[0]]} lies inside face "
                f"{tuple(fv[f].tolist())}")


def load_mesh(source: TextIO) -> Mesh:
    """
    Parse the plain-text mesh format.

    Line 1 holds `nv nc`, then nv lines `x y`, then nc lines `i j k`
    (0-based vertex indices). Blank lines and lines starting with `#` are
    skipped.

    Args:
        source: Text stream

    Returns:
        Validated Mesh
    """
    records = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        records.append((lineno, line.split()))
    if not records:
        raise MeshParseError("empty mesh file")

    lineno, header = records[0]
    if len(header) != 2:
        raise MeshParseError(f"expected 'nv nc', got {' '.join(header)!r}", lineno)
    try:
        nv, nc = int(header[0]), int(header[1])
    except ValueError:
        raise MeshParseError(f"counts must be integers, got {' '.join(header)!r}", lineno)
    if nv < 3 or nc < 1:
        raise MeshParseError(f"need at least 3 vertices and 1 cell, got nv={nv} nc={nc}", lineno)
    if len(records) != 1 + nv + nc:
        last = records[-1][0]
        raise MeshParseError(f"expected {nv} vertex and {nc} cell lines, found {len(records) - 1}", last)

    vertices = np.empty((nv, 2))
    for row, (lineno, tokens) in enumerate(records[1:1 + nv]):
        if len(tokens) != 2:
            raise MeshParseError(f"vertex line needs 2 coordinates, got {len(tokens)}", lineno)
        try:
            vertices[row] = [float(tokens[0]), float(tokens[1])]
        except ValueError:
            raise MeshParseError(f"bad coordinate in {' '.join(tokens)!r}", lineno)
        if not np.all(np.isfinite(vertices[row])):
            raise MeshParseError("coordinates must be finite", lineno)

    cells = np.empty((nc, 3), dtype=np.int64)
    for row, (lineno, tokens) in enumerate(records[1 + nv:]):
        if len(tokens) != 3:
            raise MeshParseError(f"cell line needs 3 vertex indices, got {len(tokens)}", lineno)
        try:
            cells[row] = [int(t) for t in tokens]
        except ValueError:
            raise MeshParseError(f"bad vertex index in {' '.join(tokens)!r}", lineno)
        if cells[row].min() < 0 or cells[row].max() >= nv:
            raise MeshParseError(f"vertex index out of range 0..{nv - 1}", lineno)

    return make_mesh(vertices, cells)


def write_mesh(mesh: Mesh, stream: TextIO):
    """Write a mesh in the format read by load_mesh."""
    stream.write(f"{mesh.n_vertices} {mesh.n_cells}\n")
    for x, y in mesh.vertices:
        stream.write(f"{float(x)!r} {float(y)!r}\n")
    for i, j, k in mesh.cells:
        stream.write(f"{i} {j} {k}\n")


def circumcenter(cell) -> np.ndarray:
    """
    Point equidistant from the three vertices of a triangle.

    Args:
        cell: (3, 2) vertex coordinates

    Returns:
        (2,) circumcenter

    Raises:
        DegenerateCellError: collinear vertices
    """
    p = np.asarray(cell, dtype=float)
    return _circumcenters(p[None, :, :])[0]


def _circumcenters(p):
    a = p[:, 0]
    b = p[:, 1] - a
    c = p[:, 2] - a
    d = 2.0 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    scale = np.maximum(np.einsum('ij,ij->i', b, b), np.einsum('ij,ij->i', c, c))
    if np.any(np.abs(d) <= 1e-14 * scale):
        bad = int(np.flatnonzero(np.abs(d) <= 1e-14 * scale)[0])
        raise DegenerateCellError(f"cell {bad} is degenerate (collinear vertices)")
    b2 = np.einsum('ij,ij->i', b, b)
    c2 = np.einsum('ij,ij->i', c, c)
    ux = (c[:, 1] * b2 - b[:, 1] * c2) / d
    uy = (b[:, 0] * c2 - c[:, 0] * b2) / d
    return a + np.stack([ux, uy], axis=1)


def _edge_signed_distances(mesh: Mesh, points):
    """Signed distance of one point per cell to each of its edges (positive inside)."""
    p = mesh.vertices[mesh.cells]
    out = np.empty((mesh.n_cells, 3))
    for e, (i, j) in enumerate(_LOCAL_EDGES):
        a = p[:, i]
        t = p[:, j] - a
        r = points - a
        out[:, e] = (t[:, 0] * r[:, 1] - t[:, 1] * r[:, 0]) / np.linalg.norm(t, axis=1)
    return out


def build_geometry(mesh: Mesh, strict: bool = True) -> GeometryTables:
    """
    Compute volumes, circumcenters, face distances and transmissibilities.

    Args:
        mesh: Conforming mesh
        strict: Raise AdmissibilityError when some d_sigma <= eps_geom
            (non-strict tables are used to report on rejected meshes)

    Returns:
        GeometryTables
    """
    p = mesh.vertices[mesh.cells]
    volume = _triangle_signed_areas(mesh.vertices, mesh.cells)
    centers = _circumcenters(p)
    edge_len = _cell_diameters(mesh.vertices, mesh.cells)
    h_cell = edge_len.max(axis=1)
    inradius = 2.0 * volume / edge_len.sum(axis=1)

    fv = mesh.face_vertices
    fc = mesh.face_cells
    a = mesh.vertices[fv[:, 0]]
    b = mesh.vertices[fv[:, 1]]
    measure = np.linalg.norm(b - a, axis=1)

    internal = fc[:, 1] >= 0
    k = fc[:, 0]
    l = np.where(internal, fc[:, 1], fc[:, 0])
    d_sigma = np.empty(mesh.n_faces)
    d_sigma[internal] = np.linalg.norm(centers[l[internal]] - centers[k[internal]], axis=1)
    bnd = ~internal
    t = b[bnd] - a[bnd]
    r = centers[k[bnd]] - a[bnd]
    d_sigma[bnd] = np.abs(t[:, 0] * r[:, 1] - t[:, 1] * r[:, 0]) / measure[bnd]

    face_eps = EPS_GEOM_REL * np.maximum(h_cell[k], h_cell[l])
    bad = np.flatnonzero(d_sigma <= face_eps)
    if strict and bad.size:
        f = int(bad[0])
        raise AdmissibilityError(
            f"face {f} (vertices {tuple(fv[f].tolist())}) has d_sigma = {d_sigma[f]:.3e} "
            f"<= eps_geom = {face_eps[f]:.3e}; transmissibility would blow up")

    with np.errstate(divide='ignore'):
        trans = measure / d_sigma

    # Shoelace over boundary edges taken in their cell's orientation
    shoelace = 0.0
    for e, (i, j) in enumerate(_LOCAL_EDGES):
        on_bnd = fc[mesh.cell_faces[:, e], 1] < 0
        pa = p[on_bnd, i]
        pb = p[on_bnd, j]
        shoelace += 0.5 * float(np.sum(pa[:, 0] * pb[:, 1] - pb[:, 0] * pa[:, 1]))

    bverts = mesh.vertices[np.unique(fv[bnd])]
    try:
        hull = ConvexHull(bverts)
        bverts = bverts[hull.vertices]
    except (QhullError, ValueError):
        pass
    diameter = float(pdist(bverts).max()) if len(bverts) > 1 else 0.0

    tables = GeometryTables(
        cell_volume=freeze(volume),
        circumcenter=freeze(centers),
        cell_diameter=freeze(h_cell),
        inradius=freeze(inradius),
        face_measure=freeze(measure),
        d_sigma=freeze(d_sigma),
        transmissibility=freeze(trans),
        face_eps=freeze(face_eps),
        theta_M=float(np.min(inradius / h_cell)),
        area=shoelace,
        perimeter=float(measure[bnd].sum()),
        diameter=diameter,
        h=float(h_cell.max()),
    )
    logger.debug(f"Geometry: {mesh.n_cells} cells, {mesh.n_faces} faces, "
                 f"theta_M={tables.theta_M:.4f}, h={tables.h:.4g}")
    return tables


def check_admissibility(mesh: Mesh, tables: GeometryTables,
                        eps_rel: float = EPS_GEOM_REL,
                        inside_tol_rel: float = INSIDE_TOL_REL) -> AdmissibilityReport:
    """
    Report, per cell, whether x_K lies in the closed cell and whether all
    incident face distances exceed eps_rel * h_K.

    Args:
        mesh: Mesh
        tables: Geometry built with strict=False (or strict=True)
        eps_rel: Relative face-distance tolerance
        inside_tol_rel: Relative tolerance of the closed-cell test

    Returns:
        AdmissibilityReport
    """
    h_cell = tables.cell_diameter
    dist = _edge_signed_distances(mesh, tables.circumcenter)
    inside = np.all(dist >= -inside_tol_rel * h_cell[:, None], axis=1)
    interior = np.all(dist > inside_tol_rel * h_cell[:, None], axis=1)

    fc = mesh.face_cells
    k = fc[:, 0]
    l = np.where(fc[:, 1] >= 0, fc[:, 1], fc[:, 0])
    eps = eps_rel * np.maximum(h_cell[k], h_cell[l])
    face_ok = tables.d_sigma > eps
    cell_ok = np.all(face_ok[mesh.cell_faces], axis=1)

    bad_cells = tuple(int(c) for c in np.flatnonzero(~(inside & cell_ok)))
    bad_faces = tuple(int(f) for f in np.flatnonzero(~face_ok))
    rel = tables.d_sigma / np.maximum(h_cell[k], h_cell[l])
    return AdmissibilityReport(
        passed=not bad_cells,
        circumcenter_inside=inside,
        circumcenter_interior=interior,
        distances_ok=cell_ok,
        bad_cells=bad_cells,
        bad_faces=bad_faces,
        min_relative_distance=float(rel.min()),
        theta_M=tables.theta_M,
        eps_rel=eps_rel,
    )


def require_admissible(mesh: Mesh, tables: GeometryTables) -> AdmissibilityReport:
    """check_admissibility, raising AdmissibilityError on the first bad cell."""
    report = check_admissibility(mesh, tables)
    if not report.passed:
        k = report.bad_cells[0]
        reason = "circumcenter outside the cell" if not report.circumcenter_inside[k] else "face distance below tolerance"
        raise AdmissibilityError(f"{len(report.bad_cells)} cell(s) not admissible; first is cell {k} "
                                 f"(vertices {tuple(mesh.cells[k].tolist())}): {reason}")
    return report


def refine_uniform(mesh: Mesh) -> Mesh:
    """
    Split every triangle into four congruent children through its edge midpoints.

    The midpoint of face f becomes vertex nv + f; children of cell K are
    cells 4K..4K+3, the last one being the middle triangle.
    """
    nv = mesh.n_vertices
    fv = mesh.face_vertices
    midpoints = 0.5 * (mesh.vertices[fv[:, 0]] + mesh.vertices[fv[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    a, b, c = mesh.cells[:, 0], mesh.cells[:, 1], mesh.cells[:, 2]
    m_ab = nv + mesh.cell_faces[:, 0]
    m_bc = nv + mesh.cell_faces[:, 1]
    m_ca = nv + mesh.cell_faces[:, 2]
    children = np.stack([
        np.stack([a, m_ab, m_ca], axis=1),
        np.stack([m_ab, b, m_bc], axis=1),
        np.stack([m_ca, m_bc, c], axis=1),
        np.stack([m_ab, m_bc, m_ca], axis=1),
    ], axis=1).reshape(-1, 3)
    parents = np.repeat(np.arange(mesh.n_cells), 4)
    return make_mesh(vertices, children, parent_cells=parents)


def _zipper(bottom, top, x):
    """Triangulate the strip between two rows of vertex indices sorted by x."""
    tris = []
    i = j = 0
    last_b, last_t = len(bottom) - 1, len(top) - 1
    while i < last_b or j < last_t:
        if j == last_t:
            advance_bottom = True
        elif i == last_b:
            advance_bottom = False
        else:
            nb, nt = x[bottom[i + 1]], x[top[j + 1]]
            advance_bottom = nb < nt or (nb == nt and x[bottom[i]] <= x[top[j]])
        if advance_bottom:
            tris.append((bottom[i], bottom[i + 1], top[j]))
            i += 1
        else:
            tris.append((bottom[i], top[j + 1], top[j]))
            j += 1
    return tris


def structured_mesh(nx: int, ny: Optional[int] = None,
                    width: float = 1.0, height: float = 1.0) -> Mesh:
    """
    Strictly acute strip triangulation of the rectangle [0, width] x [0, height].

    Even rows of vertices sit at x = i*hx; odd rows at x = (i + 1/2)*hx with
    their two end vertices pulled inward to r = (hx + hy)/2 from the sides.
    Each odd row contributes one boundary cell per side spanning two strips.
    Every cell is acute whenever hx/2 < hy < hx, and uniform refinement
    keeps it so.

    Args:
        nx: Intervals along x on straight rows (>= 2)
        ny: Number of strips (even); default is the valid even count closest to
            equilateral strips
        width: Domain width
        height: Domain height

    Returns:
        Mesh with 2*nx*ny cells
    """
    if nx < 2:
        raise AdmissibilityError(f"structured mesh needs nx >= 2, got {nx}")
    hx = width / nx
    if ny is None:
        strips = height / (hx * SQRT3 / 2.0)
        lo, hi = height / hx, 2.0 * height / hx
        valid = [m for m in range(2, int(hi) + 2, 2) if lo < m < hi]
        ny = min(valid, key=lambda m: abs(m - strips)) if valid else 2 * max(1, int(round(strips / 2.0)))
    if ny < 2 or ny % 2:
        raise AdmissibilityError(f"structured mesh needs an even number of strips, got ny={ny}")
    hy = height / ny
    if not (0.5 * hx < hy < hx):
        raise AdmissibilityError(
            f"strip height {hy:.4g} must lie strictly between hx/2 = {0.5 * hx:.4g} "
            f"and hx = {hx:.4g} for acute cells")
    r = 0.5 * (hx + hy)

    xs = []
    ys = []
    rows = []
    for j in range(ny + 1):
        if j % 2 == 0:
            row_x = [i * hx for i in range(nx + 1)]
            row_x[-1] = width
        else:
            row_x = [r] + [(i + 0.5) * hx for i in range(1, nx - 1)] + [width - r]
        start = len(xs)
        xs.extend(row_x)
        ys.extend([height if j == ny else j * hy] * len(row_x))
        rows.append(list(range(start, start + len(row_x))))

    x = np.array(xs)
    tris = []
    for j in range(ny):
        tris.extend(_zipper(rows[j], rows[j + 1], x))
        if j % 2 == 1:
            below, mid, above = rows[j - 1], rows[j], rows[j + 1]
            tris.append((below[0], mid[0], above[0]))
            tris.append((below[-1], above[-1], mid[-1]))

    vertices = np.stack([x, np.array(ys)], axis=1)
    mesh = make_mesh(vertices, np.array(tris, dtype=np.int64))
    logger.info(f"Structured mesh {nx}x{ny}: {mesh.n_cells} cells, {mesh.n_vertices} vertices")
    return mesh


def equilateral_mesh(kind: str = 'one') -> Mesh:
    """
    Canonical unit-edge meshes: 'one' equilateral cell, or 'two' cells
    sharing the edge (0,0)-(1,0).
    """
    top = (0.5, SQRT3 / 2.0)
    if kind == 'one':
        return make_mesh([(0.0, 0.0), (1.0, 0.0), top], [(0, 1, 2)])
    if kind == 'two':
        bottom = (0.5, -SQRT3 / 2.0)
        return make_mesh([(0.0, 0.0), (1.0, 0.0), top, bottom], [(0, 1, 2), (0, 3, 1)])
    raise ValueError(f"unknown equilateral mesh kind {kind!r}")
