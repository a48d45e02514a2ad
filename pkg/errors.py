"""
Exception hierarchy for the P1 radiative diffusion solver.

Reporting operations (admissibility, structure, diagnostics) return reports
instead of raising; everything else raises one of these.
"""


class P1Error(Exception):
    """Base class for every error raised by the solver."""


class MeshParseError(P1Error):
    """Malformed mesh text."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshTopologyError(P1Error):
    """Duplicate cell, inverted orientation or non-conforming face."""


class DegenerateCellError(P1Error):
    """Cell with collinear vertices."""


class AdmissibilityError(P1Error):
    """Mesh violates the two-point flux admissibility condition."""


class FieldError(P1Error):
    """Invalid cell field: wrong length, non-finite values or mesh mismatch."""


class LinearSolverError(P1Error):
    """Failure of the sparse SPD solver."""

    def __init__(self, message, iterations=0, residual=float('nan')):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class SolverNotConvergedError(LinearSolverError):
    """Iteration cap reached before the residual tolerance."""


class SolverBreakdownError(LinearSolverError):
    """Non-positive curvature met: the operator is not SPD."""


class NonlinearSolverError(P1Error):
    """Newton or Picard iteration failed to converge."""

    def __init__(self, message, step=None, iterations=0, residual=float('nan')):
        self.step = step
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class MaxPrincipleError(P1Error):
    """Computed state violates the discrete maximum principle."""

    def __init__(self, message, step=None, cell=None):
        self.step = step
        self.cell = cell
        super().__init__(message)


class ConfigError(P1Error):
    """Invalid run configuration."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        self.reason = message
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
