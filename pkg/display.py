"""
Report rendering using Rich.
Builds tables and panels for mesh checks, runs, diagnostics and convergence studies.
"""
from io import StringIO
from typing import Iterable, Optional
import math

from rich.console import Console, Group
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from diagnostics import (ConvergenceTable, EnergyReport, MaxPrincipleReport, OperatorReport,
                         RunReport, SpaceTranslateReport, TranslateReport)
from mesh import AdmissibilityReport, GeometryTables, Mesh
from operators import StructureReport
from scheme import Trajectory


def get_verdict_style(passed: bool, applicable: bool = True) -> str:
    """Get Rich style for a check verdict."""
    if not applicable:
        return "dim"
    return "bright_green" if passed else "bold red"


def verdict(passed: bool, applicable: bool = True) -> Text:
    label = "n/a" if not applicable else ("PASS" if passed else "FAIL")
    return Text(label, style=get_verdict_style(passed, applicable))


def fmt(x: Optional[float], spec: str = ".4e") -> str:
    """Format a number, showing N/A for None and NaN."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "N/A"
    return format(x, spec)


def create_mesh_panel(mesh: Mesh, tables: GeometryTables, report: AdmissibilityReport) -> Panel:
    """Create panel with mesh size, domain measures and the admissibility verdict."""
    text = Text()
    text.append(f"{mesh.n_cells} cells", style="bold")
    text.append(f", {mesh.n_faces} faces, {mesh.n_vertices} vertices\n", style="dim")
    text.append(f"|Ω| = {tables.area:.6g}   |∂Ω| = {tables.perimeter:.6g}   "
                f"diam Ω = {tables.diameter:.6g}   h = {tables.h:.4g}\n")
    text.append("θ_M = ")
    text.append(f"{report.theta_M:.4f}", style="cyan")
    text.append(f"   min d_σ/h_K = {report.min_relative_distance:.3e}\n")
    text.append("Admissibility: ")
    text.append_text(verdict(report.passed))
    if not report.passed:
        text.append(f"  ({len(report.bad_cells)} bad cell(s), {len(report.bad_faces)} bad face(s))", style="red")
    return Panel(text, title="Mesh", border_style="cyan", padding=(0, 1))


def create_admissibility_table(mesh: Mesh, tables: GeometryTables, report: AdmissibilityReport,
                               limit: int = 10) -> Table:
    """Create table locating the cells that fail admissibility."""
    table = Table(
        title="Rejected Cells",
        show_header=True,
        header_style="bold magenta",
        border_style="red",
    )
    table.add_column("Cell", justify="right", width=6)
    table.add_column("Vertices", width=16)
    table.add_column("x_K inside", justify="center", width=10)
    table.add_column("d_σ > ε", justify="center", width=8)
    table.add_column("min d_σ", justify="right", width=11)

    if not report.bad_cells:
        table.add_row("-", "-", "-", "-", "-")
        return table

    for k in report.bad_cells[:limit]:
        d = tables.d_sigma[mesh.cell_faces[k]].min()
        table.add_row(
            str(k),
            " ".join(str(v) for v in mesh.cells[k]),
            verdict(bool(report.circumcenter_inside[k])),
            verdict(bool(report.distances_ok[k])),
            fmt(float(d), ".3e"),
        )
    if len(report.bad_cells) > limit:
        table.add_row("…", f"{len(report.bad_cells) - limit} more", "", "", "")
    return table


def create_structure_table(report: StructureReport) -> Table:
    """Create table of M-matrix certificates."""
    table = Table(title=f"Matrix Structure (dt = {report.dt:g})", show_header=True,
                  header_style="bold magenta", border_style="blue")
    table.add_column("Matrix", style="cyan", width=26)
    for name in ("Sym", "Off≤0", "Rows≥0", "Diag>0", "Irr.dom"):
        table.add_column(name, justify="center", width=7)
    table.add_column("Verdict", justify="center", width=8)
    table.add_column("Notes", style="dim")
    for c in report.checks:
        table.add_row(
            c.name,
            verdict(c.symmetric), verdict(c.offdiag_nonpositive), verdict(c.row_sums_nonnegative),
            verdict(c.diagonal_positive),
            Text("sing.", style="yellow") if c.singular else verdict(c.irreducibly_dominant),
            verdict(c.passed),
            "; ".join(c.messages),
        )
    return table


def create_run_panel(traj: Trajectory) -> Panel:
    """Create summary panel of a finished run."""
    cfg = traj.config
    stats = traj.stats
    text = Text()
    text.append(f"{traj.mesh.n_cells} cells", style="bold")
    text.append(f"  •  N = {traj.u.N} steps of dt = {cfg.dt:g} to T = {cfg.T:g}")
    text.append(f"  •  {cfg.nonlinear_solver}", style="cyan")
    if cfg.nonlinear_term != 'abs_cubic':
        text.append(f" ({cfg.nonlinear_term})", style="yellow")
    if cfg.manufactured is not None:
        text.append("  •  manufactured sources", style="yellow")
    text.append("\n")
    its = [s.iterations for s in stats]
    text.append(f"Nonlinear iterations: total {sum(its)}, max {max(its) if its else 0}")
    text.append(f"  •  CG iterations: {sum(s.linear_iterations for s in stats)}")
    damped = sum(s.damped for s in stats)
    clamped = sum(s.clamped_u + s.clamped_phi for s in stats)
    if damped:
        text.append(f"  •  {damped} damped step(s)", style="yellow")
    if clamped:
        text.append(f"  •  {clamped} clamped value(s)", style="yellow")
    text.append("\n")
    text.append(f"max u⁰ = {traj.u_bar0:.6g}   max u^N = {float(traj.u.steps[-1].values.max()):.6g}   "
                f"max φ^N = {float(traj.phi.steps[-1].values.max()):.6g}")
    return Panel(text, title="Run", border_style="cyan", padding=(0, 1))


def create_steps_table(traj: Trajectory, max_rows: int = 12) -> Table:
    """Create table of per-step solver statistics (first and last steps when long)."""
    table = Table(title="Steps", show_header=True, header_style="bold magenta", border_style="blue")
    table.add_column("n", justify="right", width=6)
    table.add_column("t", justify="right", width=9)
    table.add_column("Its", justify="right", width=4)
    table.add_column("Residual", justify="right", width=10)
    table.add_column("CG", justify="right", width=6)
    table.add_column("max u", justify="right", width=12)
    table.add_column("max φ", justify="right", width=12)

    stats = list(traj.stats)
    if len(stats) > max_rows:
        half = max_rows // 2
        shown = stats[:half] + [None] + stats[-half:]
    else:
        shown = stats
    for s in shown:
        if s is None:
            table.add_row("…", "", "", "", "", "", "")
            continue
        table.add_row(
            str(s.n), f"{s.n * traj.u.dt:.4g}", str(s.iterations), fmt(s.residual, ".2e"),
            str(s.linear_iterations),
            f"{float(traj.u.steps[s.n].values.max()):.6g}",
            f"{float(traj.phi.steps[s.n].values.max()):.6g}",
        )
    if not shown:
        table.add_row("-", "-", "-", "-", "-", "-", "-")
    return table


def create_energy_table(energy: EnergyReport) -> Table:
    """Create table of energy terms and the worst margin of each inequality family."""
    table = Table(title="Energy Estimates", show_header=True, header_style="bold magenta",
                  border_style="blue")
    table.add_column("Quantity", style="cyan", width=24)
    table.add_column("Value", justify="right", width=12)
    table.add_column("Bound", justify="right", width=12)
    table.add_column("Verdict", justify="center", width=8)

    names = ("‖u‖ L²(H¹)", "‖∂t u‖ L²(H⁻¹)", "‖φ‖ L²(L²)", "|φ| L²(H¹)", "‖∂t φ‖ L²(L²)")
    for name, value in zip(names, energy.terms):
        table.add_row(name, fmt(value), "", "")
    table.add_row("‖u⁰‖ 1,M", fmt(energy.norm_1M_u0), "", "")

    families = {}
    for c in energy.checks:
        worst = families.get(c.name)
        if worst is None or (c.lhs - c.rhs) > (worst.lhs - worst.rhs):
            families[c.name] = c
    for name, c in families.items():
        table.add_row(f"{name} (worst n={c.n})", fmt(c.lhs), fmt(c.rhs),
                      verdict(all(x.ok for x in energy.checks if x.name == name)))
    if not energy.applicable:
        table.add_row("inequalities", "", "", verdict(True, applicable=False))
    return table


def create_translates_table(translates: Iterable[TranslateReport],
                            space: Iterable[SpaceTranslateReport] = ()) -> Table:
    """Create table of time and space translate estimates."""
    table = Table(title="Translate Estimates", show_header=True, header_style="bold magenta",
                  border_style="blue")
    table.add_column("Kind", style="cyan", width=18)
    table.add_column("Shift", justify="right", width=10)
    table.add_column("LHS", justify="right", width=12)
    table.add_column("RHS", justify="right", width=12)
    table.add_column("Verdict", justify="center", width=8)
    for t in translates:
        table.add_row(f"time ({t.norm_kind})", f"{t.tau:.4g}", fmt(t.lhs), fmt(t.rhs), verdict(t.passed))
    for s in space:
        shift = math.hypot(*s.eta)
        table.add_row("space (Neumann)", f"{shift:.4g}", fmt(s.lhs), fmt(s.bound_neumann), verdict(s.neumann_ok))
        table.add_row(f"space (c_min={s.c_min:.3g})", f"{shift:.4g}", fmt(s.lhs), fmt(s.bound_dirichlet),
                      Text("info", style="dim"))
    return table


def create_max_principle_panel(report: MaxPrincipleReport, limit: int = 5) -> Panel:
    text = Text()
    text.append("Maximum principle: ")
    text.append_text(verdict(report.passed, report.applicable))
    if report.steps:
        text.append(f"   min u = {min(s.min_u for s in report.steps):.3e}, "
                    f"min φ = {min(s.min_phi for s in report.steps):.3e}", style="dim")
    for line in report.failures[:limit]:
        text.append(f"\n  {line}", style="red")
    if len(report.failures) > limit:
        text.append(f"\n  … {len(report.failures) - limit} more", style="red")
    return Panel(text, border_style="dim", padding=(0, 1))


def create_operator_panel(report: OperatorReport) -> Panel:
    text = Text()
    text.append(f"Operator identities on {report.samples} random fields: ")
    text.append_text(verdict(report.passed))
    text.append(f"\n  adjoint D {report.adjoint_dirichlet:.2e}   adjoint N {report.adjoint_neumann:.2e}"
                f"   split {report.norm_split:.2e}   A_N·1 {report.neumann_constant:.1e}"
                f"   telescoping {report.telescoping:.2e}   Poincaré ", style="dim")
    text.append_text(verdict(report.poincare_ok))
    return Panel(text, border_style="dim", padding=(0, 1))


def create_diagnostics_table(report: RunReport) -> Table:
    """Create one-line-per-diagnostic verdict table."""
    table = Table(title="Diagnostics", show_header=True, header_style="bold magenta", border_style="blue")
    table.add_column("Check", style="cyan", width=22)
    table.add_column("Verdict", justify="center", width=8)
    table.add_column("Detail", style="dim")
    if report.max_principle is not None:
        mp = report.max_principle
        table.add_row("maximum principle", verdict(mp.passed, mp.applicable), f"{len(mp.failures)} violation(s)")
    if report.energy is not None:
        e = report.energy
        table.add_row("energy", verdict(e.passed, e.applicable), f"{len(e.failures())} failed of {len(e.checks)}")
    if report.translates:
        bad = sum(not t.passed for t in report.translates)
        table.add_row("time translates", verdict(bad == 0), f"{bad} failed of {len(report.translates)}")
    if report.space_translates:
        bad = sum(not s.passed for s in report.space_translates)
        table.add_row("space translates", verdict(bad == 0), f"{bad} failed of {len(report.space_translates)}")
    if report.chi is not None:
        c = report.chi
        table.add_row("interval identities", verdict(c.passed),
                      f"∫ = {c.integral:.6g} vs {c.expected:.6g}, window max {c.window_max:.4g}")
    if report.operators is not None:
        table.add_row("operators", verdict(report.operators.passed),
                      "structure " + ("ok" if report.operators.structure.passed else "FAILED"))
    if report.mean_defect:
        table.add_row("mean identity", verdict(report.mean_ok), f"max defect {max(report.mean_defect):.2e}")
    if report.errors is not None:
        table.add_row("exact-solution error", verdict(True, applicable=False),
                      f"L²(Q) u {report.errors.l2_l2_u:.3e}, φ {report.errors.l2_l2_phi:.3e}")
    return table


def create_convergence_table(table_data: ConvergenceTable) -> Table:
    """Create refinement study table."""
    table = Table(title="Convergence", show_header=True, header_style="bold magenta", border_style="blue")
    for name, width in (("Level", 5), ("Cells", 7), ("h", 9), ("dt", 9), ("‖Δu‖", 11), ("rate", 6),
                        ("‖Δφ‖", 11), ("rate", 6)):
        table.add_column(name, justify="right", width=width)
    if table_data.manufactured:
        for name, width in (("err u", 11), ("order", 6), ("err φ", 11), ("order", 6)):
            table.add_column(name, justify="right", width=width)
    for r in table_data.rows:
        row = [str(r.level), str(r.cells), f"{r.h:.4g}", f"{r.dt:.4g}", fmt(r.cauchy_u, ".3e"),
               fmt(r.rate_u, ".2f"), fmt(r.cauchy_phi, ".3e"), fmt(r.rate_phi, ".2f")]
        if table_data.manufactured:
            row += [fmt(r.error_u, ".3e"), fmt(r.order_u, ".2f"), fmt(r.error_phi, ".3e"), fmt(r.order_phi, ".2f")]
        table.add_row(*row)
    return table


def create_cache_text(stats: dict) -> Text:
    """Cache statistics line."""
    text = Text()
    text.append("Assembly cache: ", style="dim")
    text.append(f"{stats.get('hit_rate', 0):.0f}% hit rate", style="green" if stats.get('hit_rate', 0) > 50 else "yellow")
    text.append(f" ({stats.get('hits', 0)}/{stats.get('total_requests', 0)})", style="dim")
    return text


def render_run_report(report: RunReport) -> Group:
    """Complete run report."""
    parts = [create_run_panel(report.trajectory), create_steps_table(report.trajectory),
             create_diagnostics_table(report)]
    if report.max_principle is not None:
        parts.append(create_max_principle_panel(report.max_principle))
    if report.energy is not None:
        parts.append(create_energy_table(report.energy))
    if report.translates or report.space_translates:
        parts.append(create_translates_table(report.translates, report.space_translates))
    if report.operators is not None:
        parts.append(create_operator_panel(report.operators))
        parts.append(create_structure_table(report.operators.structure))
    overall = Text("Overall: ")
    overall.append_text(verdict(report.passed))
    parts.append(overall)
    return Group(*parts)


def render_to_text(renderable, width: int = 110) -> str:
    """Plain-text rendering (no color, no terminal probing) for report files."""
    console = Console(file=StringIO(), width=width, record=True, color_system=None,
                      force_terminal=False, log_time=False, log_path=False)
    console.print(renderable)
    return console.export_text()
