#!/usr/bin/env python3
"""
Tests for mesh loading, geometry, admissibility and refinement.
"""
import io
import math

import numpy as np

from errors import AdmissibilityError, DegenerateCellError, MeshParseError, MeshTopologyError
from mesh import (build_geometry, check_admissibility, circumcenter, equilateral_mesh, load_mesh,
                  make_mesh, refine_uniform, require_admissible, structured_mesh, write_mesh)

SQRT3 = math.sqrt(3.0)

ONE_CELL = """\
# one equilateral triangle
3 1
0 0
1 0
0.5 0.8660254037844386
0 1 2
"""

TWO_CELLS = """\
4 2
0 0
1 0
0.5 0.8660254037844386
0.5 -0.8660254037844386
0 1 2
0 3 1
"""


def right_pair():
    return make_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)])


def obtuse():
    return make_mesh([(0, 0), (4, 0), (2, 0.5)], [(0, 1, 2)])


def test_load_topology():
    """Test face enumeration of the one- and two-cell meshes."""
    print("Testing mesh topology...")
    one = load_mesh(io.StringIO(ONE_CELL))
    assert one.n_cells == 1 and one.n_vertices == 3
    assert len(one.boundary_faces) == 3 and len(one.internal_faces) == 0
    two = load_mesh(io.StringIO(TWO_CELLS))
    assert two.n_cells == 2
    assert len(two.internal_faces) == 1
    assert len(two.boundary_faces) == 4
    f = two.internal_faces[0]
    assert tuple(two.face_vertices[f]) == (0, 1)
    assert sorted(two.face_cells[f].tolist()) == [0, 1]
    print("  ✓ 1 cell / 3 boundary faces, 2 cells / 1 internal + 4 boundary faces")
    return True


def test_rejections():
    """Test topology, degeneracy and parse errors."""
    print("\nTesting rejected meshes...")
    vertices = [(0, 0), (1, 0), (0.5, 1), (0.5, -1), (0.5, 2)]
    try:
        make_mesh(vertices, [(0, 1, 2), (0, 3, 1), (0, 1, 4)])
        assert False, "face shared by three cells accepted"
    except MeshTopologyError as e:
        print(f"  ✓ three cells on a face: {e}")

    try:
        make_mesh([(0, 0), (1, 0), (2, 0)], [(0, 1, 2)])
        assert False, "collinear cell accepted"
    except DegenerateCellError:
        print("  ✓ collinear cell rejected")

    try:
        make_mesh([(0, 0), (1, 0), (0, 1)], [(0, 2, 1)])
        assert False, "clockwise cell accepted"
    except MeshTopologyError:
        print("  ✓ clockwise cell rejected")

    try:
        make_mesh([(0, 0), (2, 0), (1, 1), (1, 0), (1, -1)], [(0, 1, 2), (0, 4, 3)])
        assert False, "hanging node accepted"
    except MeshTopologyError as e:
        assert "hanging" in str(e)
        print("  ✓ hanging node rejected")

    bad = ONE_CELL.replace("1 0\n", "1 zero\n")
    try:
        load_mesh(io.StringIO(bad))
        assert False, "bad coordinate accepted"
    except MeshParseError as e:
        assert e.line == 4, e.line
        print(f"  ✓ parse error located: {e}")

    try:
        load_mesh(io.StringIO("3 1\n0 0\n1 0\n0 1 2\n"))
        assert False, "short file accepted"
    except MeshParseError:
        print("  ✓ missing lines rejected")
    return True


def test_write_mesh():
    """Test that write_mesh output loads back to the same mesh."""
    print("\nTesting write_mesh...")
    mesh = structured_mesh(4)
    buf = io.StringIO()
    write_mesh(mesh, buf)
    again = load_mesh(io.StringIO(buf.getvalue()))
    assert again.same_as(mesh)
    assert np.array_equal(again.vertices, mesh.vertices)
    print(f"  ✓ {mesh.n_cells} cells reloaded identically")
    return True


def test_circumcenters():
    """Test circumcenters computed by hand."""
    print("\nTesting circumcenters...")
    assert np.allclose(circumcenter([(0, 0), (1, 0), (0.5, SQRT3 / 2)]), (0.5, SQRT3 / 6), atol=1e-15)
    assert np.allclose(circumcenter([(0, 0), (1, 0), (0, 1)]), (0.5, 0.5), atol=1e-15)
    assert np.allclose(circumcenter([(0, 0), (2, 0), (1, 1)]), (1.0, 0.0), atol=1e-15)
    try:
        circumcenter([(0, 0), (1, 1), (2, 2)])
        assert False
    except DegenerateCellError:
        pass
    print("  ✓ equilateral, right and isoceles cases")
    return True


def test_equilateral_geometry():
    """Test volumes, distances and transmissibilities of unit equilateral cells."""
    print("\nTesting equilateral geometry...")
    one = equilateral_mesh('one')
    t = build_geometry(one)
    assert math.isclose(t.cell_volume[0], SQRT3 / 4, rel_tol=1e-14)
    assert np.allclose(t.d_sigma, SQRT3 / 6, rtol=1e-14)
    assert np.allclose(t.transmissibility, 2 * SQRT3, rtol=1e-14)
    assert math.isclose(t.theta_M, SQRT3 / 6, rel_tol=1e-12)
    assert abs(t.theta_M - 0.2887) < 1e-4
    assert math.isclose(t.area, SQRT3 / 4, rel_tol=1e-14)
    assert math.isclose(t.perimeter, 3.0, rel_tol=1e-14)
    assert math.isclose(t.diameter, 1.0, rel_tol=1e-14)
    print(f"  ✓ |K| = √3/4, d_σ = √3/6, τ_σ = 2√3, θ_M = {t.theta_M:.4f}")

    two = equilateral_mesh('two')
    t2 = build_geometry(two)
    f = two.internal_faces[0]
    assert math.isclose(t2.d_sigma[f], SQRT3 / 3, rel_tol=1e-14)
    assert math.isclose(t2.transmissibility[f], SQRT3, rel_tol=1e-14)
    print("  ✓ internal face d_σ = √3/3, τ_σ = √3")
    return True


def test_domain_measures():
    """Test area, perimeter and diameter of the structured unit square."""
    print("\nTesting domain measures...")
    t = build_geometry(structured_mesh(8))
    assert math.isclose(t.area, 1.0, rel_tol=1e-12)
    assert math.isclose(t.perimeter, 4.0, rel_tol=1e-12)
    assert math.isclose(t.diameter, math.sqrt(2.0), rel_tol=1e-12)
    assert math.isclose(float(t.cell_volume.sum()), 1.0, rel_tol=1e-12)
    print(f"  ✓ |Ω| = 1, |∂Ω| = 4, diam = √2, h = {t.h:.4f}")
    return True


def test_admissibility():
    """Test accepted and rejected meshes."""
    print("\nTesting admissibility...")
    mesh = equilateral_mesh('two')
    report = check_admissibility(mesh, build_geometry(mesh))
    assert report.passed and report.circumcenter_interior.all()
    print("  ✓ equilateral mesh passes with interior circumcenters")

    pair = right_pair()
    try:
        build_geometry(pair)
        assert False, "zero face distance accepted"
    except AdmissibilityError as e:
        print(f"  ✓ right-triangle pair rejected: {e}")
    tables = build_geometry(pair, strict=False)
    report = check_admissibility(pair, tables)
    assert not report.passed
    assert report.bad_faces == tuple(int(f) for f in pair.internal_faces)
    assert report.min_relative_distance == 0.0

    mesh = obtuse()
    tables = build_geometry(mesh)
    report = check_admissibility(mesh, tables)
    assert not report.passed and not report.circumcenter_inside[0]
    assert tables.circumcenter[0, 1] < 0
    try:
        require_admissible(mesh, tables)
        assert False
    except AdmissibilityError as e:
        assert "circumcenter outside" in str(e)
    print("  ✓ obtuse triangle fails: circumcenter outside the cell")
    return True


def test_refinement():
    """Test uniform refinement counts, parents and preserved admissibility."""
    print("\nTesting refinement...")
    one = refine_uniform(equilateral_mesh('one'))
    assert one.n_cells == 4
    assert one.parent_cells.tolist() == [0, 0, 0, 0]
    two = equilateral_mesh('two')
    fine = refine_uniform(two)
    assert fine.n_cells == 8
    assert len(fine.internal_faces) == 2 * len(two.internal_faces) + 3 * two.n_cells
    assert len(fine.boundary_faces) == 2 * len(two.boundary_faces)
    coarse_t = build_geometry(two)
    fine_t = build_geometry(fine)
    for k in range(two.n_cells):
        children = fine_t.cell_volume[fine.parent_cells == k]
        assert math.isclose(children.sum(), coarse_t.cell_volume[k], rel_tol=1e-14)
    print("  ✓ 1 → 4 and 2 → 8 cells, child volumes sum to parents")

    mesh = structured_mesh(4)
    for level in range(3):
        report = check_admissibility(mesh, build_geometry(mesh))
        assert report.passed and report.circumcenter_interior.all(), level
        mesh = refine_uniform(mesh)
    print("  ✓ structured mesh stays strictly acute under refinement")
    return True


def test_structured_mesh():
    """Test structured mesh sizes and argument checks."""
    print("\nTesting structured mesh...")
    mesh = structured_mesh(8)
    assert mesh.n_cells == 2 * 8 * 10
    assert check_admissibility(mesh, build_geometry(mesh)).passed
    wide = structured_mesh(6, 4, width=2.0, height=1.0)
    assert wide.n_cells == 2 * 6 * 4
    assert math.isclose(build_geometry(wide).area, 2.0, rel_tol=1e-12)
    for args in ((8, 9), (8, 16), (1,)):
        try:
            structured_mesh(*args)
            assert False, args
        except AdmissibilityError:
            pass
    print("  ✓ 160 cells for nx=8; odd or flat strips rejected")
    return True


def run_all_tests():
    """Run all tests."""
    print("=" * 60)
    print("MESH TESTS")
    print("=" * 60)

    tests = [
        test_load_topology,
        test_rejections,
        test_write_mesh,
        test_circumcenters,
        test_equilateral_geometry,
        test_domain_measures,
        test_admissibility,
        test_refinement,
        test_structured_mesh,
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
