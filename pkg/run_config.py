"""
Run configuration: `key = value` text files parsed into a frozen RunConfig.

Example:

    # 16x16 bump run
    mesh_nx = 16
    dt = 0.01
    T = 0.5
    u0_profile = bump
    output_formats = both
"""
from dataclasses import dataclass, fields, replace
from typing import Optional, Tuple
import logging
import math

from discrete_space import read_cell_field_csv
from errors import ConfigError, P1Error
from linalg import SolverConfig
from manufactured import ManufacturedSolution
from mesh import Mesh, equilateral_mesh, load_mesh, structured_mesh
from scheme import NONLINEAR_SOLVERS, NONLINEAR_TERMS, SchemeConfig, bump, sine
from utils import step_count

logger = logging.getLogger(__name__)

U0_PROFILES = ('bump', 'sine')
MESH_BUILTINS = ('structured', 'equilateral_one', 'equilateral_two')
QUADRATURES = ('edge_midpoint', 'subdivision')
OUTPUT_FORMATS = ('csv', 'vtk', 'both')
DIAGNOSTIC_NAMES = ('max_principle', 'energy', 'translates', 'chi', 'operators')


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings; every field is also a config-file key."""
    dt: float
    T: float
    mesh_file: Optional[str] = None
    mesh_builtin: str = 'structured'
    mesh_nx: int = 8
    mesh_ny: Optional[int] = None
    mesh_width: float = 1.0
    mesh_height: float = 1.0
    u0_constant: Optional[float] = None
    u0_profile: Optional[str] = None
    u0_csv: Optional[str] = None
    nonlinear_solver: str = 'newton'
    nonlinear_term: str = 'abs_cubic'
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    linear_rel_tol: float = 1e-12
    linear_abs_tol: float = 1e-14
    linear_max_iter: Optional[int] = None
    quadrature: str = 'edge_midpoint'
    output_dir: str = 'p1_output'
    output_formats: str = 'both'
    vtk_every: int = 1
    diagnostics: Tuple[str, ...] = DIAGNOSTIC_NAMES
    manufactured_sources: bool = False
    check_jacobian: bool = False
    levels: int = 3
    parallel_levels: bool = False

    def __post_init__(self):
        step_count(self.T, self.dt)
        given = [k for k in ('u0_constant', 'u0_profile', 'u0_csv') if getattr(self, k) is not None]
        if len(given) > 1:
            raise ConfigError(f"give only one of u0_constant, u0_profile, u0_csv (got {', '.join(given)})",
                              key=given[1])
        if not given and not self.manufactured_sources:
            raise ConfigError("initial data missing: set u0_constant, u0_profile or u0_csv", key='u0_constant')
        if self.u0_constant is not None and not (self.u0_constant >= 0 and math.isfinite(self.u0_constant)):
            raise ConfigError(f"initial temperature must be nonnegative (the scheme assumes u0 >= 0), "
                              f"got {self.u0_constant}", key='u0_constant')
        _choice('u0_profile', self.u0_profile, U0_PROFILES, optional=True)
        _choice('mesh_builtin', self.mesh_builtin, MESH_BUILTINS)
        _choice('nonlinear_solver', self.nonlinear_solver, NONLINEAR_SOLVERS)
        _choice('nonlinear_term', self.nonlinear_term, NONLINEAR_TERMS)
        _choice('quadrature', self.quadrature, QUADRATURES)
        _choice('output_formats', self.output_formats, OUTPUT_FORMATS)
        for name in self.diagnostics:
            _choice('diagnostics', name, DIAGNOSTIC_NAMES)
        for key in ('newton_tol', 'linear_rel_tol', 'linear_abs_tol', 'mesh_width', 'mesh_height'):
            if not getattr(self, key) > 0:
                raise ConfigError(f"must be positive, got {getattr(self, key)}", key=key)
        for key in ('newton_max_iter', 'vtk_every', 'mesh_nx'):
            if getattr(self, key) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, key)}", key=key)
        if self.linear_max_iter is not None and self.linear_max_iter < 1:
            raise ConfigError(f"must be >= 1, got {self.linear_max_iter}", key='linear_max_iter')
        if self.levels < 2:
            raise ConfigError(f"must be >= 2, got {self.levels}", key='levels')

    @property
    def steps(self) -> int:
        return step_count(self.T, self.dt)

    @property
    def formats(self) -> Tuple[str, ...]:
        return ('csv', 'vtk') if self.output_formats == 'both' else (self.output_formats,)


def _choice(key, value, allowed, optional=False):
    if value is None and optional:
        return
    if value not in allowed:
        raise ConfigError(f"expected one of {', '.join(allowed)}, got {value!r}", key=key)


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text: str) -> Optional[int]:
    return None if text.lower() in ('', 'none', 'auto') else int(text)


def _names(text: str) -> Tuple[str, ...]:
    if text.lower() in ('', 'none'):
        return ()
    if text.lower() == 'all':
        return DIAGNOSTIC_NAMES
    return tuple(part.strip() for part in text.split(',') if part.strip())


_CONVERTERS = {
    'dt': float,
    'T': float,
    'mesh_file': str,
    'mesh_builtin': str,
    'mesh_nx': int,
    'mesh_ny': _optional_int,
    'mesh_width': float,
    'mesh_height': float,
    'u0_constant': float,
    'u0_profile': str,
    'u0_csv': str,
    'nonlinear_solver': str,
    'nonlinear_term': str,
    'newton_tol': float,
    'newton_max_iter': int,
    'linear_rel_tol': float,
    'linear_abs_tol': float,
    'linear_max_iter': _optional_int,
    'quadrature': str,
    'output_dir': str,
    'output_formats': str,
    'vtk_every': int,
    'diagnostics': _names,
    'manufactured_sources': _bool,
    'check_jacobian': _bool,
    'levels': int,
    'parallel_levels': _bool,
}


def parse_config(text: str) -> RunConfig:
    """
    Parse `key = value` lines (`#` starts a comment) into a RunConfig.

    Raises:
        ConfigError: unknown or repeated key, unparsable value, missing
            dt/T/u0, or an invalid combination (located by line and key)
    """
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in _CONVERTERS:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in values:
            raise ConfigError(f"repeated key (first on line {lines[key]})", key=key, line=lineno)
        try:
            values[key] = _CONVERTERS[key](value)
        except ValueError as e:
            raise ConfigError(f"invalid value {value!r}: {e}", key=key, line=lineno)
        lines[key] = lineno

    for required in ('dt', 'T'):
        if required not in values:
            raise ConfigError("required key missing", key=required)
    try:
        return RunConfig(**values)
    except ConfigError as e:
        if e.key in lines and e.line is None:
            raise ConfigError(e.reason, key=e.key, line=lines[e.key])
        raise


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    return parse_config(text)


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Replace fields that were given (not None) on the command line."""
    known = {f.name for f in fields(RunConfig)}
    changes = {k: v for k, v in overrides.items() if v is not None and k in known}
    return replace(config, **changes) if changes else config


def build_mesh(config: RunConfig) -> Mesh:
    """Load mesh_file or generate the built-in mesh."""
    if config.mesh_file:
        try:
            with open(config.mesh_file) as f:
                return load_mesh(f)
        except OSError as e:
            raise ConfigError(f"cannot read mesh file {config.mesh_file}: {e}", key='mesh_file')
    if config.mesh_builtin == 'equilateral_one':
        return equilateral_mesh('one')
    if config.mesh_builtin == 'equilateral_two':
        return equilateral_mesh('two')
    return structured_mesh(config.mesh_nx, config.mesh_ny, config.mesh_width, config.mesh_height)


def scheme_config(config: RunConfig, mesh: Mesh) -> SchemeConfig:
    """SchemeConfig for `mesh`, with u0 resolved to a constant, profile or CSV field."""
    if config.u0_constant is not None:
        u0 = config.u0_constant
    elif config.u0_profile == 'bump':
        u0 = bump(config.mesh_width, config.mesh_height)
    elif config.u0_profile == 'sine':
        u0 = sine(config.mesh_width, config.mesh_height)
    elif config.u0_csv is not None:
        try:
            with open(config.u0_csv) as f:
                u0 = read_cell_field_csv(f, mesh)
        except OSError as e:
            raise ConfigError(f"cannot read {config.u0_csv}: {e}", key='u0_csv')
        except P1Error as e:
            raise ConfigError(f"{config.u0_csv}: {e}", key='u0_csv')
    else:
        u0 = 0.0
    return SchemeConfig(
        dt=config.dt,
        T=config.T,
        u0=u0,
        newton_tol=config.newton_tol,
        newton_max_iter=config.newton_max_iter,
        nonlinear_solver=config.nonlinear_solver,
        nonlinear_term=config.nonlinear_term,
        quadrature=config.quadrature,
        linear=SolverConfig(rel_tol=config.linear_rel_tol, abs_tol=config.linear_abs_tol,
                            max_iter=config.linear_max_iter),
        manufactured=ManufacturedSolution() if config.manufactured_sources else None,
        check_jacobian=config.check_jacobian,
    )
