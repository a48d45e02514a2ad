#!/usr/bin/env python3
"""
Tests for the runtime checks of the a priori estimates.
"""
from dataclasses import replace
import math

import numpy as np

from assembly_cache import get_cache
from diagnostics import (chi_identities, check_max_principle, convergence_study, energy_budget,
                         injected_l2_difference, run_diagnostics, space_translate_lhs, space_translate_sq,
                         time_translate_lhs, time_translate_sq, verify_operators)
from discrete_space import CellField, SpaceTimeField
from errors import ConfigError
from manufactured import ManufacturedSolution
from mesh import equilateral_mesh, refine_uniform, structured_mesh
from scheme import SchemeConfig, bump, run

SQRT3 = math.sqrt(3.0)


def _field(mesh, rows, dt):
    steps = tuple(CellField(mesh, r) for r in rows)
    return SpaceTimeField(steps, dt, dt * (len(steps) - 1))


def _sample(mesh, values, pts):
    """Piecewise-constant field at points, zero outside the mesh."""
    out = np.zeros(len(pts))
    tri = mesh.vertices[mesh.cells]
    for k in range(mesh.n_cells):
        a, b, c = tri[k]
        T = np.column_stack([b - a, c - a])
        lam = np.linalg.solve(T, (pts - a).T)
        inside = (lam[0] >= 0) & (lam[1] >= 0) & (lam[0] + lam[1] <= 1)
        out[inside] = values[k]
    return out


def _brute_force_translate(f, tau, per_step=64):
    """Midpoint rule on a grid of width dt/per_step covering [-tau, T)."""
    dt, N = f.dt, f.N
    mass = get_cache().geometry(f.mesh).cell_volume
    U = f.values()[:N]
    width = dt / per_step
    count = int(round((f.T + tau) / width))
    mids = -tau + (np.arange(count) + 0.5) * width

    def at(t):
        idx = np.floor(t / dt).astype(int)
        vals = np.zeros((len(t), U.shape[1]))
        ok = (idx >= 0) & (idx < N)
        vals[ok] = U[idx[ok]]
        return vals

    diff = at(mids + tau) - at(mids)
    return width * float(np.sum((diff ** 2) @ mass))


def test_max_principle():
    """Test the maximum-principle report on clean and corrupted trajectories."""
    print("Testing maximum-principle report...")
    mesh = structured_mesh(4)
    zero = run(mesh, SchemeConfig(dt=0.1, T=0.3, u0=0.0))
    assert check_max_principle(zero).passed
    traj = run(mesh, SchemeConfig(dt=0.01, T=0.1, u0=1.0))
    report = check_max_principle(traj)
    assert report.passed and report.applicable and not report.failures
    maxima = [s.max_u for s in report.steps]
    assert all(b <= a for a, b in zip(maxima, maxima[1:]))
    print(f"  ✓ u0 ≡ 1: max u from {maxima[0]:.4f} down to {maxima[-1]:.4f}")

    bad = np.array(traj.u.steps[2].values)
    bad[3] = -0.5
    steps = list(traj.u.steps)
    steps[2] = CellField(mesh, bad)
    corrupted = replace(traj, u=SpaceTimeField(tuple(steps), traj.u.dt, traj.u.T))
    report = check_max_principle(corrupted)
    assert not report.passed
    assert report.failures[0].startswith("step 2, cell 3")
    assert not report.steps[2].u_ok
    print(f"  ✓ corruption located: {report.failures[0]}")
    return True


def test_energy():
    """Test the energy terms and per-step inequalities."""
    print("\nTesting energy budget...")
    mesh = structured_mesh(4)
    zero = energy_budget(run(mesh, SchemeConfig(dt=0.1, T=0.3, u0=0.0)))
    assert zero.terms == (0.0, 0.0, 0.0, 0.0, 0.0) and zero.passed
    report = energy_budget(run(mesh, SchemeConfig(dt=0.01, T=0.5, u0=1.0)))
    assert all(math.isfinite(t) and t >= 0 for t in report.terms)
    assert report.passed, report.failures()[:1]
    names = {c.name for c in report.checks}
    assert names == {'energy', 'summed', 'dual_dt', 'phi_bound', 'dt_energy', 'dt_phi'}
    assert len([c for c in report.checks if c.name == 'energy']) == 50
    print(f"  ✓ {len(report.checks)} inequalities hold; terms {tuple(round(t, 4) for t in report.terms)}")

    # δt·norm_1M(u⁰)² grows like 1/h for u0 ≡ 1, so only the other four terms settle
    coarse_mesh = structured_mesh(8)
    coarse = energy_budget(run(coarse_mesh, SchemeConfig(dt=0.01, T=0.5, u0=1.0)))
    fine = energy_budget(run(refine_uniform(coarse_mesh), SchemeConfig(dt=0.01, T=0.5, u0=1.0)))
    assert coarse.passed and fine.passed
    for name, a, b in zip(('dt u', 'phi', 'phi semi', 'dt phi'), coarse.terms[1:], fine.terms[1:]):
        assert abs(b - a) < 0.2 * a, (name, a, b)
    assert fine.l2_h1_u > coarse.l2_h1_u
    print("  ✓ refinement moves the four settled terms by < 20%")

    exact = ManufacturedSolution()
    skipped = energy_budget(run(mesh, SchemeConfig(dt=0.05, T=0.1, manufactured=exact)))
    assert not skipped.applicable and skipped.passed and not skipped.checks
    print("  ✓ inequalities skipped with manufactured sources")
    return True


def test_time_translates():
    """Test exact translate integrals against hand values and a fine-grid oracle."""
    print("\nTesting time translates...")
    one = equilateral_mesh('one')
    K = SQRT3 / 4
    f = _field(one, [[1.0], [2.0], [7.0]], dt=1.0)
    assert math.isclose(time_translate_lhs(f, 1.0), 6 * K, rel_tol=1e-14)
    assert time_translate_lhs(f, -1.0) == time_translate_lhs(f, 1.0)
    zero = _field(one, [[0.0]] * 3, dt=1.0)
    report = time_translate_sq(zero, 0.7)
    assert report.lhs == 0.0 and report.rhs == 0.0 and report.passed
    print("  ✓ (1, 2) with τ = 1 gives 6|K|; zero field gives 0 ≤ 0")

    two = equilateral_mesh('two')
    rng = np.random.default_rng(4)
    dt, N = 0.5, 6
    f = _field(two, rng.standard_normal((N + 1, 2)), dt=dt)
    for tau in (dt / 2, dt, N * dt / 3):
        exact = time_translate_lhs(f, tau)
        oracle = _brute_force_translate(f, tau)
        assert abs(exact - oracle) <= 1e-6 * oracle, (tau, exact, oracle)
        for kind in ('l2', 'dirichlet_h1'):
            r = time_translate_sq(f, tau, kind)
            assert r.passed and r.lhs <= r.rhs
    print("  ✓ agrees with the dt/64 midpoint oracle; bound holds for both norms")
    return True


def test_chi_identities():
    """Test the interval identities."""
    print("\nTesting interval identities...")
    r = chi_identities(2, 1.0, 0.5, [1.0, 1.0])
    assert r.integral == 1.0 and r.passed
    r = chi_identities(2, 1.0, 3.0, [2.0, -0.5])
    assert math.isclose(r.integral, 4.5, rel_tol=1e-15) and r.passed
    rng = np.random.default_rng(12)
    for _ in range(100):
        N = int(rng.integers(1, 20))
        dt = float(rng.uniform(0.01, 1.0))
        tau = float(rng.uniform(0.0, N * dt)) or dt
        r = chi_identities(N, dt, tau, rng.standard_normal(N), sweep=200)
        assert r.integral_exact and r.window_bound_ok, (N, dt, tau)
    for args in ((2, 1.0, 0.0, [1.0, 1.0]), (2, 1.0, 0.5, [1.0])):
        try:
            chi_identities(*args)
            assert False, args
        except ValueError:
            pass
    print("  ✓ exact integral τ Σα and window bound on 100 random cases")
    return True


def test_space_translates():
    """Test polygon-overlay translates against exact and Monte-Carlo values."""
    print("\nTesting space translates...")
    one = equilateral_mesh('one')
    v = CellField.constant(one, 1.0)
    assert space_translate_sq(v, (0.0, 0.0)).lhs == 0.0
    assert math.isclose(space_translate_lhs(v, (5.0, 0.0)), 2 * SQRT3 / 4, rel_tol=1e-14)
    print("  ✓ η = 0 gives 0, disjoint shift gives 2|K|")

    rng = np.random.default_rng(21)
    for mesh, eta in ((equilateral_mesh('two'), (0.3, 0.1)),
                      (refine_uniform(equilateral_mesh('two')), (-0.15, 0.2))):
        values = rng.uniform(0.5, 1.5, mesh.n_cells)
        exact = space_translate_lhs(CellField(mesh, values), eta)
        lo = mesh.vertices.min(axis=0) - np.abs(eta)
        hi = mesh.vertices.max(axis=0) + np.abs(eta)
        pts = lo + (hi - lo) * rng.random((1_000_000, 2))
        diff = _sample(mesh, values, pts + np.asarray(eta)) - _sample(mesh, values, pts)
        mc = float(np.prod(hi - lo)) * float(np.mean(diff ** 2))
        assert abs(mc - exact) <= 0.01 * exact, (exact, mc)
    print("  ✓ within 1% of a 10⁶-sample Monte-Carlo estimate")

    mesh = structured_mesh(8)
    h = get_cache().geometry(mesh).h
    for _ in range(5):
        w = CellField(mesh, rng.standard_normal(mesh.n_cells))
        for eta in ((h / 2, 0.0), (0.0, h), (0.2, 0.3)):
            r = space_translate_sq(w, eta)
            assert r.neumann_ok and r.passed
        r = space_translate_sq(w, (h / 2, 0.0))
        assert r.dirichlet_ok and r.c_min <= r.c_omega
    print("  ✓ both bounds hold for random fields on the structured mesh")
    return True


def test_verify_operators():
    """Test the operator identity suite on small meshes."""
    print("\nTesting operator identities...")
    for mesh in (equilateral_mesh('two'), structured_mesh(4), refine_uniform(structured_mesh(4))):
        report = verify_operators(mesh, samples=100, seed=3, dt=0.01)
        assert report.passed, report
        assert report.neumann_constant == 0.0
    print("  ✓ adjointness, splitting, kernel, telescoping, Poincaré and structure")
    return True


def test_injected_difference():
    """Test coarse-to-fine injection."""
    print("\nTesting injected differences...")
    coarse_mesh = equilateral_mesh('two')
    fine_mesh = refine_uniform(coarse_mesh)
    coarse = _field(coarse_mesh, [[1.0, 2.0], [3.0, 4.0]], dt=1.0)
    parents = fine_mesh.parent_cells
    same = _field(fine_mesh, [np.array([1.0, 2.0])[parents], np.array([1.0, 2.0])[parents],
                              np.zeros(8)], dt=0.5)
    assert injected_l2_difference(coarse, same, parents) == 0.0
    shifted = _field(fine_mesh, [np.array([2.0, 3.0])[parents], np.array([2.0, 3.0])[parents],
                                 np.zeros(8)], dt=0.5)
    # coarse interval 0 covers both fine intervals; difference 1 everywhere
    assert math.isclose(injected_l2_difference(coarse, shifted, parents), math.sqrt(SQRT3 / 2), rel_tol=1e-14)
    print("  ✓ injected copy gives 0, unit offset gives sqrt(T |Ω|)")
    return True


def test_convergence_study():
    """Test refinement studies."""
    print("\nTesting convergence study...")
    zero = convergence_study(structured_mesh(4), SchemeConfig(dt=0.05, T=0.1, u0=0.0), levels=3)
    assert all(r.cauchy_u == 0.0 and r.cauchy_phi == 0.0 for r in zero.rows[1:])
    assert [r.cells for r in zero.rows] == [48, 192, 768]
    assert [r.steps for r in zero.rows] == [2, 4, 8]

    table = convergence_study(structured_mesh(8), SchemeConfig(dt=0.01, T=0.5, u0=bump()), levels=4,
                              parallel=True)
    diffs = [r.cauchy_u for r in table.rows[1:]]
    assert table.cauchy_decreasing(), diffs
    assert diffs[-1] <= 0.7 * diffs[-2], diffs
    print(f"  ✓ bump, 4 levels: Cauchy differences {[f'{d:.3e}' for d in diffs]}, "
          f"last ratio {diffs[-1] / diffs[-2]:.3f}")

    exact = ManufacturedSolution()
    table = convergence_study(structured_mesh(8), SchemeConfig(dt=0.05, T=0.2, manufactured=exact), levels=3)
    errors = [r.error_u for r in table.rows]
    assert all(b < a for a, b in zip(errors, errors[1:])), errors
    assert table.rows[-1].order_u >= 1.0, table.rows[-1]
    print(f"  ✓ manufactured errors {[f'{e:.3e}' for e in errors]}, order {table.rows[-1].order_u:.2f}")

    try:
        convergence_study(structured_mesh(4), SchemeConfig(dt=0.05, T=0.1), levels=1)
        assert False
    except ConfigError:
        pass
    return True


def test_run_diagnostics():
    """Test the aggregate report."""
    print("\nTesting aggregate diagnostics...")
    traj = run(structured_mesh(4), SchemeConfig(dt=0.01, T=0.1, u0=bump()))
    report = run_diagnostics(traj, samples=100)
    assert report.passed
    assert len(report.translates) == 8 and len(report.space_translates) == 4
    assert report.chi is not None and report.operators is not None and report.mean_ok
    only = run_diagnostics(traj, selection=('max_principle',))
    assert only.energy is None and only.max_principle.passed
    try:
        run_diagnostics(traj, selection=('energy', 'magic'))
        assert False
    except ConfigError:
        pass
    print("  ✓ full suite passes on a bump run; selection honoured")
    return True


def test_mean_identity_after_decay():
    """Test that the mean identity stays relative once ∫u⁴ is tiny."""
    print("\nTesting mean identity on decayed runs...")
    mesh = structured_mesh(16)
    mass = get_cache().geometry(mesh).cell_volume
    for u0 in (1.0, bump()):
        traj = run(mesh, SchemeConfig(dt=0.01, T=0.5, u0=u0))
        scale = [float(np.sum(mass * u.values ** 4)) for u in traj.u.steps]
        assert min(scale) < 1e-10, min(scale)
        report = run_diagnostics(traj, selection=('max_principle',))
        assert report.mean_ok and report.passed
        worst = max(d / s for d, s in zip(report.mean_defect, scale) if s > 0)
        assert worst <= 1e-10, worst
        print(f"  ✓ ∫(u^N)⁴ = {scale[-1]:.2e}, worst relative defect {worst:.2e}")
    return True


def run_all_tests():
    """Run all tests."""
    print("=" * 60)
    print("DIAGNOSTICS TESTS")
    print("=" * 60)

    tests = [
        test_max_principle,
        test_energy,
        test_time_translates,
        test_chi_identities,
        test_space_translates,
        test_verify_operators,
        test_injected_difference,
        test_convergence_study,
        test_run_diagnostics,
        test_mean_identity_after_decay,
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
