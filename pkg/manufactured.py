"""
Manufactured exact solution on the unit square with its source terms.

u(x, y, t)   = (1 + t) * 16 x(1-x) y(1-y)      (zero on the boundary)
phi(x, y, t) = 1 + cos(pi x) cos(pi y) / 2     (zero normal derivative)

u is affine in t and phi is steady, so the implicit Euler step and the
lagged phi^n in the temperature equation add no time error; what remains
is the spatial error of the scheme.
"""
from dataclasses import dataclass
import math

import numpy as np

from assembly_cache import get_cache

PI = math.pi


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact pair (u, phi) and the sources f_u, f_phi making it solve the system."""

    def profile(self, x, y):
        return 16.0 * x * (1.0 - x) * y * (1.0 - y)

    def u(self, x, y, t):
        return (1.0 + t) * self.profile(x, y)

    def phi(self, x, y, t=0.0):
        return 1.0 + 0.5 * np.cos(PI * x) * np.cos(PI * y)

    def source_u(self, x, y, t):
        """f_u = du/dt - Laplacian(u) + |u| u^3 - phi."""
        u = self.u(x, y, t)
        minus_laplacian = (1.0 + t) * 32.0 * (x * (1.0 - x) + y * (1.0 - y))
        return self.profile(x, y) + minus_laplacian + np.abs(u) * u ** 3 - self.phi(x, y, t)

    def source_phi(self, x, y, t):
        """f_phi = phi - Laplacian(phi) - u^4."""
        cc = np.cos(PI * x) * np.cos(PI * y)
        return 1.0 + (0.5 + PI ** 2) * cc - self.u(x, y, t) ** 4


@dataclass(frozen=True)
class ManufacturedErrors:
    """Errors against the exact solution sampled at circumcenters."""
    l2_l2_u: float
    l2_l2_phi: float
    linf_u: float
    linf_phi: float


def manufactured_errors(traj, solution: ManufacturedSolution) -> ManufacturedErrors:
    """
    Space-time L2 errors sqrt(dt * sum_n ||e^n||^2) and max cell errors.

    Args:
        traj: Trajectory produced with manufactured sources
        solution: The exact solution used for the sources
    """
    mesh = traj.u.mesh
    tables = get_cache().geometry(mesh)
    xc = tables.circumcenter
    vol = tables.cell_volume
    dt = traj.u.dt
    sq_u = []
    sq_phi = []
    linf_u = 0.0
    linf_phi = 0.0
    for n, (un, pn) in enumerate(zip(traj.u.steps, traj.phi.steps)):
        t = n * dt
        eu = un.values - solution.u(xc[:, 0], xc[:, 1], t)
        ep = pn.values - solution.phi(xc[:, 0], xc[:, 1], t)
        sq_u.append(float(np.sum(vol * eu ** 2)))
        sq_phi.append(float(np.sum(vol * ep ** 2)))
        linf_u = max(linf_u, float(np.max(np.abs(eu))))
        linf_phi = max(linf_phi, float(np.max(np.abs(ep))))
    return ManufacturedErrors(
        l2_l2_u=math.sqrt(dt * math.fsum(sq_u)),
        l2_l2_phi=math.sqrt(dt * math.fsum(sq_phi)),
        linf_u=linf_u,
        linf_phi=linf_phi,
    )
