#!/usr/bin/env python3
"""
Tests for the two-point flux Laplacians, their structure checks and the assembly cache.
"""
import io
import math

import numpy as np
import scipy.sparse as sp

from assembly_cache import AssemblyCache, clear_global_cache, get_cache
from discrete_space import CellField, inner_dirichlet, inner_neumann
from mesh import build_geometry, equilateral_mesh, structured_mesh
from operators import (apply_laplacian_dirichlet, apply_laplacian_neumann, assemble_laplacians,
                       check_matrix, dump_matrix, verify_structure)

SQRT3 = math.sqrt(3.0)


def test_single_cell_laplacian():
    """Test the 1x1 Laplacians of one equilateral cell."""
    print("Testing single-cell Laplacians...")
    mesh = equilateral_mesh('one')
    pair = get_cache().laplacians(mesh)
    lap = apply_laplacian_dirichlet(pair, CellField.constant(mesh, 1.0))
    assert math.isclose(lap.values[0], -24.0, rel_tol=1e-13)
    assert apply_laplacian_dirichlet(pair, CellField.zeros(mesh)).values[0] == 0.0
    assert apply_laplacian_neumann(pair, CellField.constant(mesh, 5.0)).values[0] == 0.0
    print("  ✓ Δ_D 1 = -24, Δ_N const = 0")
    return True


def test_adjointness():
    """Test psi.A psi against the inner products on random fields."""
    print("\nTesting adjointness...")
    rng = np.random.default_rng(11)
    meshes = [equilateral_mesh('one'), equilateral_mesh('two'),
              structured_mesh(8), structured_mesh(16), structured_mesh(32)]
    for mesh in meshes:
        pair = get_cache().laplacians(mesh)
        for _ in range(1000):
            psi = rng.standard_normal(mesh.n_cells)
            f = CellField(mesh, psi)
            qd = float(psi @ (pair.A_dirichlet @ psi))
            qn = float(psi @ (pair.A_neumann @ psi))
            assert abs(qd - inner_dirichlet(f, f)) <= 1e-12 * abs(qd)
            assert abs(qn - inner_neumann(f, f)) <= 1e-12 * max(abs(qn), 1e-300)
        neumann_rows = apply_laplacian_neumann(pair, CellField.constant(mesh, 1.0)).values
        assert np.all(neumann_rows == 0.0)
    print(f"  ✓ 1000 random fields on {len(meshes)} meshes; Neumann rows exactly 0 on constants")
    return True


def test_two_cell_matrices():
    """Test explicit entries of the two-cell matrices."""
    print("\nTesting two-cell matrices...")
    mesh = equilateral_mesh('two')
    pair = assemble_laplacians(mesh, build_geometry(mesh))
    A_d = pair.A_dirichlet.to_dense()
    A_n = pair.A_neumann.to_dense()
    assert np.allclose(A_d, [[5 * SQRT3, -SQRT3], [-SQRT3, 5 * SQRT3]], rtol=1e-14)
    assert np.allclose(A_n, [[SQRT3, -SQRT3], [-SQRT3, SQRT3]], rtol=1e-14)
    buf = io.StringIO()
    dump_matrix(pair.A_neumann, buf)
    lines = buf.getvalue().splitlines()
    assert [tuple(map(int, line.split()[:2])) for line in lines] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert math.isclose(float(lines[1].split()[2]), -SQRT3, rel_tol=1e-14)
    print("  ✓ A_D = [[5√3, -√3], [-√3, 5√3]], A_N = √3 [[1, -1], [-1, 1]]")
    return True


def test_verify_structure():
    """Test M-matrix certificates."""
    print("\nTesting structure verification...")
    mesh = equilateral_mesh('two')
    pair = get_cache().laplacians(mesh)
    report = verify_structure(pair, dt=0.1)
    assert report.passed
    neumann = report.checks[1]
    assert neumann.name == 'A_neumann' and neumann.singular and neumann.passed
    print("  ✓ two-cell mesh, dt = 0.1 passes; A_neumann reported singular")

    report = verify_structure(get_cache().laplacians(structured_mesh(8)), dt=0.01,
                              augmentation=np.full(160, 0.3))
    assert report.passed
    bad = verify_structure(pair, dt=0.1, augmentation=np.array([1.0, -1.0]))
    assert not bad.passed

    positive = sp.csr_matrix(np.array([[2.0, 0.5], [0.5, 2.0]]))
    check = check_matrix(positive, 'positive off-diagonal')
    assert not check.passed and not check.offdiag_nonpositive
    blocks = sp.csr_matrix(np.array([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 2.0]]))
    check = check_matrix(blocks)
    assert not check.irreducibly_dominant and not check.passed
    print("  ✓ positive off-diagonal and undominated block rejected")
    return True


def test_assembly_cache():
    """Test cache hits, eviction and statistics."""
    print("\nTesting assembly cache...")
    cache = AssemblyCache(max_meshes=2)
    meshes = [equilateral_mesh('one'), equilateral_mesh('two'), structured_mesh(4)]
    t1 = cache.geometry(meshes[0])
    t2 = cache.geometry(equilateral_mesh('one'))
    assert t1 is t2
    p1 = cache.laplacians(meshes[0])
    assert cache.laplacians(meshes[0]) is p1
    for m in meshes[1:]:
        cache.geometry(m)
    stats = cache.get_stats()
    assert stats['hits'] >= 2
    assert stats['evicted'] >= 1
    assert 0 < stats['hit_rate'] < 100
    cache.reset_stats()
    assert cache.get_stats()['total_requests'] == 0
    cache.clear()
    assert cache.geometry(meshes[0]) is not t1

    shared = get_cache().laplacians(meshes[1])
    clear_global_cache()
    assert get_cache().laplacians(meshes[1]) is not shared
    print(f"  ✓ hits, eviction and reset ({stats})")
    return True


def run_all_tests():
    """Run all tests."""
    print("=" * 60)
    print("OPERATOR TESTS")
    print("=" * 60)

    tests = [
        test_single_cell_laplacian,
        test_adjointness,
        test_two_cell_matrices,
        test_verify_structure,
        test_assembly_cache,
    ]

    results = []
    for test in tests:
        try:
            results.append(bool(test()))
        except Exception as e:
            print(f"  ✗ {test.__name__} failed with exception: {e!r}")
            results.append(False)

    print("\n" + "=" * 60)
    passed = sum(results)
    total = len(results)
    if all(results):
        print(f"✓ ALL TESTS PASSED ({passed}/{total})")
        print("=" * 60)
        return 0
    print(f"✗ SOME TESTS FAILED ({passed}/{total} passed)")
    print("=" * 60)
    return 1


if __name__ == "__main__":
    import sys
    sys.exit(run_all_tests())
