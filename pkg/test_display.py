#!/usr/bin/env python3
"""
Tests for the Rich report rendering, using a small run and hand-made reports.
"""
import math

from rich.console import Group
from rich.panel import Panel
from rich.table import Table

from diagnostics import (ConvergenceTable, LevelResult, MaxPrincipleReport, RunReport, run_diagnostics)
from display import (create_admissibility_table, create_cache_text, create_convergence_table,
                     create_diagnostics_table, create_max_principle_panel, create_mesh_panel, fmt,
                     get_verdict_style, render_run_report, render_to_text, verdict)
from mesh import build_geometry, check_admissibility, equilateral_mesh, make_mesh, structured_mesh
from scheme import SchemeConfig, bump, run

sample_convergence = ConvergenceTable(rows=[
    LevelResult(level=0, cells=48, h=0.2795, dt=0.02, steps=5),
    LevelResult(level=1, cells=192, h=0.1398, dt=0.01, steps=10, cauchy_u=4.1e-3, cauchy_phi=1.2e-3),
    LevelResult(level=2, cells=768, h=0.0699, dt=0.005, steps=20, cauchy_u=2.0e-3, cauchy_phi=6.1e-4,
                rate_u=1.04, rate_phi=0.98),
])


def test_helpers():
    """Test verdict styles and number formatting."""
    print("Testing helpers...")
    assert get_verdict_style(True) == "bright_green"
    assert get_verdict_style(False) == "bold red"
    assert get_verdict_style(False, applicable=False) == "dim"
    assert verdict(True).plain == "PASS" and verdict(False).plain == "FAIL"
    assert verdict(False, applicable=False).plain == "n/a"
    assert fmt(None) == "N/A" and fmt(float('nan')) == "N/A"
    assert fmt(0.5, ".2f") == "0.50"
    print("  ✓ PASS/FAIL/n/a and N/A formatting")
    return True


def test_mesh_rendering():
    """Test the mesh panel and rejected-cell table."""
    print("\nTesting mesh rendering...")
    mesh = equilateral_mesh('one')
    tables = build_geometry(mesh)
    report = check_admissibility(mesh, tables)
    panel = create_mesh_panel(mesh, tables, report)
    assert isinstance(panel, Panel)
    text = render_to_text(panel)
    assert "0.2887" in text and "PASS" in text and "1 cells" in text

    obtuse = make_mesh([(0, 0), (4, 0), (2, 0.5)], [(0, 1, 2)])
    tables = build_geometry(obtuse)
    report = check_admissibility(obtuse, tables)
    table = create_admissibility_table(obtuse, tables, report)
    assert isinstance(table, Table) and table.row_count == 1
    text = render_to_text(Group(create_mesh_panel(obtuse, tables, report), table))
    assert "FAIL" in text and "1 bad cell(s)" in text
    print("  ✓ accepted and rejected meshes rendered")
    return True


def test_run_report():
    """Test the full run report of a small bump run."""
    print("\nTesting run report...")
    traj = run(structured_mesh(4), SchemeConfig(dt=0.01, T=0.05, u0=bump()))
    report = run_diagnostics(traj, samples=20)
    text = render_to_text(render_run_report(report))
    for needle in ("maximum principle", "energy", "time translates", "space translates",
                   "interval identities", "operators", "mean identity", "Overall: PASS"):
        assert needle in text, needle
    assert text == render_to_text(render_run_report(report))
    table = create_diagnostics_table(RunReport(trajectory=traj))
    assert table.row_count == 0
    print(f"  ✓ {len(text.splitlines())} lines, deterministic")
    return True


def test_max_principle_panel():
    """Test that violations are listed with a limit."""
    print("\nTesting maximum-principle panel...")
    failures = [f"step {n}, cell 0: u = -1.000000e+00 < 0" for n in range(8)]
    panel = create_max_principle_panel(MaxPrincipleReport(steps=[], failures=failures, passed=False), limit=3)
    text = render_to_text(panel)
    assert "step 2, cell 0" in text and "step 5, cell 0" not in text
    assert "FAIL" in text
    print("  ✓ first 3 of 8 violations shown")
    return True


def test_convergence_and_cache():
    """Test the convergence table and cache line."""
    print("\nTesting convergence table...")
    table = create_convergence_table(sample_convergence)
    assert table.row_count == 3
    text = render_to_text(table)
    assert "4.100e-03" in text and "1.04" in text and "N/A" in text
    line = create_cache_text({'hits': 9, 'total_requests': 12, 'hit_rate': 75.0})
    assert line.plain == "Assembly cache: 75% hit rate (9/12)"
    assert math.isclose(sample_convergence.rows[2].rate_u, 1.04)
    assert sample_convergence.cauchy_decreasing()
    print("  ✓ rates, missing values and cache statistics")
    return True


def run_all_tests():
    """Run all tests."""
    print("=" * 60)
    print("DISPLAY TESTS")
    print("=" * 60)

    tests = [
        test_helpers,
        test_mesh_rendering,
        test_run_report,
        test_max_principle_panel,
        test_convergence_and_cache,
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
