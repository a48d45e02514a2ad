"""
Writers for trajectories and reports: CSV tables and legacy ASCII VTK.

All numbers are written with repr() so that identical inputs give
byte-identical files.
"""
from pathlib import Path
from typing import List, Sequence, TextIO
import csv
import logging

from diagnostics import ConvergenceTable, RunReport
from mesh import Mesh
from scheme import Trajectory

logger = logging.getLogger(__name__)


def _num(x) -> str:
    # -0.0 + 0.0 is 0.0
    return repr(float(x) + 0.0)


def write_fields_csv(traj: Trajectory, stream: TextIO):
    """Rows `step,time,cell,u,phi` for every step and cell."""
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(['step', 'time', 'cell', 'u', 'phi'])
    dt = traj.u.dt
    for n, (u, phi) in enumerate(zip(traj.u.steps, traj.phi.steps)):
        t = _num(n * dt)
        for k, (a, b) in enumerate(zip(u.values, phi.values)):
            writer.writerow([n, t, k, _num(a), _num(b)])


def write_vtk(mesh: Mesh, stream: TextIO, cell_data: dict, title: str):
    """Legacy ASCII unstructured grid of triangles with double cell scalars."""
    nv, nc = mesh.n_vertices, mesh.n_cells
    stream.write("# vtk DataFile Version 3.0\n")
    stream.write(title.replace('\n', ' ')[:255] + "\n")
    stream.write("ASCII\n")
    stream.write("DATASET UNSTRUCTURED_GRID\n")
    stream.write(f"POINTS {nv} double\n")
    for x, y in mesh.vertices:
        stream.write(f"{_num(x)} {_num(y)} 0.0\n")
    stream.write(f"CELLS {nc} {4 * nc}\n")
    for i, j, k in mesh.cells:
        stream.write(f"3 {i} {j} {k}\n")
    stream.write(f"CELL_TYPES {nc}\n")
    for _ in range(nc):
        stream.write("5\n")
    stream.write(f"CELL_DATA {nc}\n")
    for name, values in cell_data.items():
        stream.write(f"SCALARS {name} double 1\n")
        stream.write("LOOKUP_TABLE default\n")
        for v in values:
            stream.write(_num(v) + "\n")


def vtk_steps(N: int, every: int) -> List[int]:
    """Steps 0, every, 2*every, ... plus the final step."""
    steps = list(range(0, N + 1, every))
    if steps[-1] != N:
        steps.append(N)
    return steps


def write_fields(traj: Trajectory, formats: Sequence[str], out_dir, vtk_every: int = 1) -> List[Path]:
    """
    Export a trajectory.

    Args:
        traj: Complete trajectory
        formats: Any of 'csv', 'vtk'
        out_dir: Output directory (created if missing)
        vtk_every: Write a VTK file every this many steps (and at the end)

    Returns:
        Paths written, in order
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if 'csv' in formats:
        path = out / 'fields.csv'
        with open(path, 'w', newline='') as f:
            write_fields_csv(traj, f)
        written.append(path)
    if 'vtk' in formats:
        dt = traj.u.dt
        for n in vtk_steps(traj.u.N, vtk_every):
            path = out / f'fields_{n:05d}.vtk'
            with open(path, 'w', newline='') as f:
                write_vtk(traj.mesh, f,
                          {'u': traj.u.steps[n].values, 'phi': traj.phi.steps[n].values},
                          f"P1 radiative diffusion step {n} t={_num(n * dt)}")
            written.append(path)
    logger.info(f"Wrote {len(written)} field file(s) to {out}")
    return written


def write_steps_csv(report: RunReport, stream: TextIO):
    """One row per step: solver statistics, extrema and the mean-identity defect."""
    traj = report.trajectory
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(['step', 'time', 'iterations', 'residual', 'damped', 'linear_iterations',
                     'clamped_u', 'clamped_phi', 'max_u', 'max_phi', 'mean_defect'])
    stats = {s.n: s for s in traj.stats}
    defects = report.mean_defect
    for n, (u, phi) in enumerate(zip(traj.u.steps, traj.phi.steps)):
        s = stats.get(n)
        writer.writerow([
            n, _num(n * traj.u.dt),
            s.iterations if s else 0,
            _num(s.residual) if s else _num(0.0),
            s.damped if s else 0,
            s.linear_iterations if s else 0,
            s.clamped_u if s else 0,
            s.clamped_phi if s else 0,
            _num(u.values.max()), _num(phi.values.max()),
            _num(defects[n]) if n < len(defects) else '',
        ])


def write_convergence_csv(table: ConvergenceTable, stream: TextIO):
    writer = csv.writer(stream, lineterminator='\n')
    columns = ['level', 'cells', 'h', 'dt', 'steps', 'cauchy_u', 'cauchy_phi', 'rate_u', 'rate_phi']
    if table.manufactured:
        columns += ['error_u', 'error_phi', 'order_u', 'order_phi']
    writer.writerow(columns)
    for row in table.rows:
        writer.writerow([getattr(row, c) if c in ('level', 'cells', 'steps') else _num(getattr(row, c))
                         for c in columns])


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        f.write(text)
    return path


def write_csv_file(path, writer_fn, payload) -> Path:
    """Open `path` and call writer_fn(payload, stream)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer_fn(payload, f)
    return path
