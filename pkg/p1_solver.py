#!/usr/bin/env python3
"""
Finite-volume solver for P1 radiative diffusion on admissible triangle meshes.

Subcommands:
    run          integrate a configured problem, export fields and a report
    check-mesh   admissibility report and mesh regularity of a mesh
    verify       run plus every enabled diagnostic; nonzero exit on any violation
    convergence  nested-refinement study with Cauchy differences and rates
"""
from pathlib import Path
import argparse
import logging
import sys

from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from assembly_cache import get_cache
from diagnostics import convergence_study, run_diagnostics
from display import (create_admissibility_table, create_cache_text, create_convergence_table,
                     create_mesh_panel, render_run_report, render_to_text, verdict)
from errors import ConfigError, P1Error
from exporters import write_convergence_csv, write_csv_file, write_fields, write_steps_csv, write_text
from mesh import build_geometry, check_admissibility, equilateral_mesh, load_mesh, structured_mesh
from run_config import MESH_BUILTINS, OUTPUT_FORMATS, RunConfig, build_mesh, load_config, scheme_config, with_overrides
from scheme import run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

DEFAULT_LOG_FILE = '/tmp/p1_solver_debug.log'


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="Finite-volume solver for P1 radiative diffusion.")
    ap.add_argument("--verbose", "-v", action="store_true", help="Also echo log records to the console")
    ap.add_argument("--log-level", choices=['ERROR', 'WARNING', 'INFO', 'DEBUG'], default='INFO',
                    help="Logging level (default: INFO)")
    ap.add_argument("--log-file", default=DEFAULT_LOG_FILE, help=f"Log file (default: {DEFAULT_LOG_FILE})")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="key = value configuration file")
        p.add_argument("--out", help="Output directory (overrides output_dir)")

    p = sub.add_parser("run", help="Integrate and export fields")
    common(p)
    p.add_argument("--format", choices=OUTPUT_FORMATS, help="Field export format (overrides output_formats)")

    p = sub.add_parser("check-mesh", help="Admissibility report of a mesh")
    common(p, needs_config=False)
    p.add_argument("--mesh", help="Mesh file (instead of the config's mesh)")
    p.add_argument("--builtin", choices=MESH_BUILTINS, help="Built-in mesh (instead of the config's mesh)")
    p.add_argument("--nx", type=int, default=8, help="Cells across for the structured mesh (default: 8)")

    p = sub.add_parser("verify", help="Run with every enabled diagnostic; exit 1 on any violation")
    common(p)
    p.add_argument("--format", choices=OUTPUT_FORMATS, help="Field export format (overrides output_formats)")
    p.add_argument("--samples", type=int, default=1000, help="Random fields for operator checks (default: 1000)")
    p.add_argument("--seed", type=int, default=0, help="Seed of random draws (default: 0)")

    p = sub.add_parser("convergence", help="Refinement study")
    common(p)
    p.add_argument("--levels", type=int, help="Number of refinement levels (overrides levels)")
    p.add_argument("--parallel-levels", action="store_const", const=True, default=None,
                   help="Run levels concurrently")
    return ap


def setup_logging(args):
    handlers = [logging.FileHandler(args.log_file)]
    if args.verbose:
        handlers.append(RichHandler(console=Console(stderr=True), show_time=False, show_path=False))
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s [%(levelname)s] %(message)s',
        handlers=handlers,
    )


def resolve_config(args) -> RunConfig:
    config = load_config(args.config)
    return with_overrides(
        config,
        output_dir=args.out,
        output_formats=getattr(args, 'format', None),
        levels=getattr(args, 'levels', None),
        parallel_levels=getattr(args, 'parallel_levels', None),
    )


def _progress(console: Console) -> Progress:
    return Progress(TextColumn("[cyan]{task.description}"), BarColumn(), MofNCompleteColumn(),
                    TimeElapsedColumn(), console=console, transient=True)


def _integrate(config: RunConfig, console: Console):
    mesh = build_mesh(config)
    scfg = scheme_config(config, mesh)
    with _progress(console) as progress:
        task = progress.add_task(f"{mesh.n_cells} cells", total=scfg.N)
        traj = run(mesh, scfg, on_step=lambda state, st: progress.advance(task))
    return traj, scfg


def cmd_run(config: RunConfig, console: Console, samples: int = 1000, seed: int = 0) -> int:
    """Run, export fields and write report.txt and steps.csv. Exit 0 once the run completes."""
    traj, scfg = _integrate(config, console)
    report = run_diagnostics(traj, config.diagnostics, cfg=scfg.linear, samples=samples, seed=seed)
    out = Path(config.output_dir)
    write_fields(traj, config.formats, out, config.vtk_every)
    write_text(out / 'report.txt', render_to_text(render_run_report(report)))
    write_csv_file(out / 'steps.csv', write_steps_csv, report)
    console.print(render_run_report(report))
    console.print(create_cache_text(get_cache().get_stats()))
    console.print(f"[green]✓ Wrote results to {out}[/green]")
    return EXIT_OK


def _check_mesh_source(args):
    if args.mesh:
        try:
            with open(args.mesh) as f:
                return load_mesh(f), Path(args.out or 'p1_output')
        except OSError as e:
            raise ConfigError(f"cannot read mesh file {args.mesh}: {e}")
    if args.builtin:
        if args.builtin == 'structured':
            mesh = structured_mesh(args.nx)
        else:
            mesh = equilateral_mesh(args.builtin.split('_', 1)[1])
        return mesh, Path(args.out or 'p1_output')
    if args.config:
        config = resolve_config(args)
        return build_mesh(config), Path(config.output_dir)
    raise ConfigError("give --mesh, --builtin or --config")


def cmd_check_mesh(args, console: Console) -> int:
    """Write admissibility.txt; exit 1 when some cell is not admissible."""
    mesh, out = _check_mesh_source(args)
    tables = build_geometry(mesh, strict=False)
    report = check_admissibility(mesh, tables)
    panel = create_mesh_panel(mesh, tables, report)
    console.print(panel)
    parts = [panel]
    if not report.passed:
        table = create_admissibility_table(mesh, tables, report)
        console.print(table)
        parts.append(table)
    text = "".join(render_to_text(p) for p in parts)
    write_text(out / 'admissibility.txt', text)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_verify(config: RunConfig, console: Console, samples: int = 1000, seed: int = 0) -> int:
    """Admissibility first, then run and diagnostics; exit 0 iff everything enabled passes."""
    mesh = build_mesh(config)
    tables = build_geometry(mesh, strict=False)
    adm = check_admissibility(mesh, tables)
    if not adm.passed:
        console.print(create_mesh_panel(mesh, tables, adm))
        console.print(create_admissibility_table(mesh, tables, adm))
        console.print("[red]✗ Verification stopped at the admissibility stage[/red]")
        logger.error(f"Mesh not admissible: {len(adm.bad_cells)} bad cell(s)")
        return EXIT_FAILED

    traj, scfg = _integrate(config, console)
    report = run_diagnostics(traj, config.diagnostics, cfg=scfg.linear, samples=samples, seed=seed)
    out = Path(config.output_dir)
    rendered = render_run_report(report)
    write_text(out / 'report.txt', render_to_text(rendered))
    write_csv_file(out / 'steps.csv', write_steps_csv, report)
    console.print(rendered)
    line = verdict(report.passed)
    console.print("Verification: ", line)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_convergence(config: RunConfig, console: Console) -> int:
    """Write convergence.csv and convergence.txt."""
    base = build_mesh(config)
    scfg = scheme_config(config, base)
    with _progress(console) as progress:
        task = progress.add_task("levels", total=config.levels)
        table = convergence_study(base, scfg, config.levels, parallel=config.parallel_levels,
                                  on_level=lambda m, traj: progress.advance(task))
    out = Path(config.output_dir)
    rendered = create_convergence_table(table)
    write_csv_file(out / 'convergence.csv', write_convergence_csv, table)
    write_text(out / 'convergence.txt', render_to_text(rendered))
    console.print(rendered)
    if not table.cauchy_decreasing():
        console.print("[yellow]⚠ Cauchy differences are not strictly decreasing[/yellow]")
    console.print(create_cache_text(get_cache().get_stats()))
    return EXIT_OK


def main(argv=None) -> int:
    """Main entry point; returns the process exit status."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    setup_logging(args)
    console = Console()
    logger.info(f"p1_solver {args.command} started")

    try:
        if args.command == 'check-mesh':
            status = cmd_check_mesh(args, console)
        else:
            config = resolve_config(args)
            if args.command == 'run':
                status = cmd_run(config, console)
            elif args.command == 'verify':
                status = cmd_verify(config, console, samples=args.samples, seed=args.seed)
            else:
                status = cmd_convergence(config, console)
    except ConfigError as e:
        console.print(f"[red]✗ Configuration error: {e}[/red]")
        logger.error(f"Configuration error: {e}", exc_info=True)
        return EXIT_CONFIG
    except P1Error as e:
        console.print(f"[red]✗ {type(e).__name__}: {e}[/red]")
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_FAILED
    except OSError as e:
        console.print(f"[red]✗ I/O error: {e}[/red]")
        logger.error(f"I/O error: {e}", exc_info=True)
        return EXIT_FAILED

    logger.info(f"p1_solver {args.command} finished with status {status}")
    return status


if __name__ == "__main__":
    sys.exit(main())
