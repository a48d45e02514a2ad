"""
Two-point flux Laplacians with homogeneous Dirichlet and Neumann conditions.

Matrices are stored in the symmetric form -|K| * Delta, so
(A_D psi)_K = sum over faces of K of (|sigma|/d_sigma)(psi_K - psi_L),
with psi_L = 0 outside the domain for A_D and boundary faces dropped for A_N.
"""
from dataclasses import dataclass, field
from typing import List, Optional, TextIO
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from discrete_space import CellField
from errors import FieldError
from mesh import GeometryTables, Mesh
from utils import freeze

logger = logging.getLogger(__name__)

# Relative slack for row-sum and symmetry checks
STRUCTURE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SparseSpdMatrix:
    """Square CSR matrix with sorted column indices; treated as immutable."""
    matrix: sp.csr_matrix

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=float, copy=True)
        if m.shape[0] != m.shape[1]:
            raise FieldError(f"matrix must be square, got shape {m.shape}")
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, 'matrix', m)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def data(self) -> np.ndarray:
        return self.matrix.data

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, x):
        return self.matrix @ x


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    A_dirichlet: SparseSpdMatrix
    A_neumann: SparseSpdMatrix
    mass: np.ndarray              # |K|
    mesh: Mesh = field(repr=False)
    # Face lists in index order, used for flux-form products
    internal_k: np.ndarray = field(repr=False, default=None)
    internal_l: np.ndarray = field(repr=False, default=None)
    internal_t: np.ndarray = field(repr=False, default=None)
    boundary_k: np.ndarray = field(repr=False, default=None)
    boundary_t: np.ndarray = field(repr=False, default=None)


@dataclass
class MatrixCheck:
    name: str
    symmetric: bool = False
    offdiag_nonpositive: bool = False
    row_sums_nonnegative: bool = False
    diagonal_positive: bool = False
    irreducibly_dominant: bool = False
    singular: bool = False
    passed: bool = False
    messages: List[str] = field(default_factory=list)


@dataclass
class StructureReport:
    checks: List[MatrixCheck]
    dt: float
    passed: bool = False

    def __post_init__(self):
        self.passed = all(c.passed for c in self.checks)


def assemble_laplacians(mesh: Mesh, tables: GeometryTables) -> LaplacianPair:
    """
    Assemble A_D and A_N face by face in index order.

    Args:
        mesh: Mesh
        tables: Strict geometry tables of the mesh

    Returns:
        LaplacianPair
    """
    n = mesh.n_cells
    fc = mesh.face_cells
    trans = tables.transmissibility
    internal = mesh.internal_faces
    boundary = mesh.boundary_faces
    if not np.all(np.isfinite(trans)):
        raise FieldError("geometry tables contain infinite transmissibilities; build them with strict=True")

    k, l, t = fc[internal, 0], fc[internal, 1], trans[internal]
    kb, tb = fc[boundary, 0], trans[boundary]

    rows = np.concatenate([k, l, k, l])
    cols = np.concatenate([k, l, l, k])
    vals = np.concatenate([t, t, -t, -t])
    a_n = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    a_d = sp.coo_matrix((np.concatenate([vals, tb]),
                         (np.concatenate([rows, kb]), np.concatenate([cols, kb]))),
                        shape=(n, n)).tocsr()

    pair = LaplacianPair(
        A_dirichlet=SparseSpdMatrix(a_d),
        A_neumann=SparseSpdMatrix(a_n),
        mass=freeze(tables.cell_volume),
        mesh=mesh,
        internal_k=freeze(k),
        internal_l=freeze(l),
        internal_t=freeze(t),
        boundary_k=freeze(kb),
        boundary_t=freeze(tb),
    )
    logger.debug(f"Assembled Laplacians: n={n}, nnz(A_D)={pair.A_dirichlet.matrix.nnz}")
    return pair


def flux_product(pair: LaplacianPair, psi: np.ndarray, dirichlet: bool) -> np.ndarray:
    """A psi in flux form; every internal face contributes t*(psi_K - psi_L) exactly once."""
    flux = pair.internal_t * (psi[pair.internal_k] - psi[pair.internal_l])
    out = np.zeros(len(psi))
    np.add.at(out, pair.internal_k, flux)
    np.add.at(out, pair.internal_l, -flux)
    if dirichlet:
        np.add.at(out, pair.boundary_k, pair.boundary_t * psi[pair.boundary_k])
    return out


def _check_field(pair: LaplacianPair, psi: CellField):
    if not psi.mesh.same_as(pair.mesh):
        raise FieldError("field and operator live on different meshes")


def apply_laplacian_dirichlet(pair: LaplacianPair, psi: CellField) -> CellField:
    """Delta_{M,D} psi = -(A_D psi)/|K|."""
    _check_field(pair, psi)
    return CellField(psi.mesh, -flux_product(pair, psi.values, True) / pair.mass)


def apply_laplacian_neumann(pair: LaplacianPair, psi: CellField) -> CellField:
    """Delta_{M,N} psi = -(A_N psi)/|K|; exactly zero on constants."""
    _check_field(pair, psi)
    return CellField(psi.mesh, -flux_product(pair, psi.values, False) / pair.mass)


def check_matrix(matrix, name: str = 'matrix', allow_singular: bool = False) -> MatrixCheck:
    """
    M-matrix certificate of one symmetric matrix.

    Checks symmetry, nonpositive off-diagonals, nonnegative row sums,
    positive diagonal and irreducible diagonal dominance (every connected
    block of the off-diagonal graph has a strictly dominant row). With
    allow_singular, zero row sums everywhere are reported as a singular
    matrix instead of a failure.
    """
    m = sp.csr_matrix(matrix.matrix if isinstance(matrix, SparseSpdMatrix) else matrix, dtype=float)
    check = MatrixCheck(name=name)
    n = m.shape[0]
    scale = float(abs(m).max()) if m.nnz else 0.0

    asym = abs(m - m.T)
    asym_max = float(asym.max()) if asym.nnz else 0.0
    check.symmetric = asym_max <= STRUCTURE_TOL * max(scale, 1e-300)
    if not check.symmetric:
        check.messages.append(f"asymmetry {asym_max:.3e}")

    diag = m.diagonal()
    off = m - sp.diags(diag)
    off.eliminate_zeros()
    if off.nnz and off.data.max() > 0:
        coo = off.tocoo()
        i = int(np.argmax(coo.data))
        check.messages.append(f"positive off-diagonal {coo.data[i]:.3e} at ({coo.row[i]}, {coo.col[i]})")
    else:
        check.offdiag_nonpositive = True

    row_sums = np.asarray(m.sum(axis=1)).ravel()
    tol = STRUCTURE_TOL * np.maximum(np.abs(diag), scale * 1e-3 if scale else 1.0)
    negative = np.flatnonzero(row_sums < -tol)
    check.row_sums_nonnegative = negative.size == 0
    if negative.size:
        check.messages.append(f"negative row sum {row_sums[negative[0]]:.3e} in row {negative[0]}")

    strict_rows = row_sums > tol
    check.singular = not strict_rows.any()

    if allow_singular and n == 1:
        check.diagonal_positive = True
    else:
        nonpositive = np.flatnonzero(diag <= 0)
        check.diagonal_positive = nonpositive.size == 0
        if nonpositive.size:
            check.messages.append(f"non-positive diagonal in row {nonpositive[0]}")

    n_blocks, labels = connected_components(abs(off), directed=False)
    dominant_blocks = np.zeros(n_blocks, dtype=bool)
    dominant_blocks[labels[strict_rows]] = True
    check.irreducibly_dominant = bool(dominant_blocks.all()) and check.row_sums_nonnegative
    if not dominant_blocks.all():
        block = int(np.flatnonzero(~dominant_blocks)[0])
        msg = f"block {block} of {n_blocks} has no strictly dominant row"
        if allow_singular and check.singular:
            check.messages.append(f"singular (zero row sums): {msg}")
        else:
            check.messages.append(msg)

    structural = (check.symmetric and check.offdiag_nonpositive
                  and check.row_sums_nonnegative and check.diagonal_positive)
    if allow_singular and check.singular:
        check.passed = structural
    else:
        check.passed = structural and check.irreducibly_dominant
    return check


def verify_structure(pair: LaplacianPair, dt: float = 1.0,
                     augmentation: Optional[np.ndarray] = None) -> StructureReport:
    """
    M-matrix certificates for A_D, A_N and the systems actually solved.

    Args:
        pair: Assembled Laplacians
        dt: Time step of the variant M/dt + A_D + diag(augmentation)
        augmentation: Nonnegative per-cell diagonal (e.g. 4|u|u^2 |K|)

    Returns:
        StructureReport (never raises on a violation)
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    mass = sp.diags(pair.mass)
    aug = np.zeros(len(pair.mass)) if augmentation is None else np.asarray(augmentation, dtype=float)
    checks = [
        check_matrix(pair.A_dirichlet, 'A_dirichlet'),
        check_matrix(pair.A_neumann, 'A_neumann', allow_singular=True),
        check_matrix(mass + pair.A_neumann.matrix, 'M + A_neumann'),
        check_matrix(mass / dt + pair.A_dirichlet.matrix + sp.diags(aug), 'M/dt + A_dirichlet + aug'),
    ]
    if np.any(aug < 0):
        checks[-1].passed = False
        checks[-1].messages.append("diagonal augmentation has negative entries")
    report = StructureReport(checks=checks, dt=dt)
    for c in checks:
        logger.debug(f"Structure {c.name}: passed={c.passed} {'; '.join(c.messages)}")
    return report


def dump_matrix(matrix, stream: TextIO):
    """Write `row col value` lines sorted by (row, col)."""
    m = sp.csr_matrix(matrix.matrix if isinstance(matrix, SparseSpdMatrix) else matrix)
    m.sort_indices()
    coo = m.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for i in order:
        stream.write(f"{coo.row[i]} {coo.col[i]} {float(coo.data[i])!r}\n")
