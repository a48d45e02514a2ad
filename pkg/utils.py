"""
Shared constants and small helpers for the P1 radiative diffusion solver.
"""
import hashlib
import math

import numpy as np

from errors import ConfigError

# Geometry tolerances, relative to the local cell diameter h_K
EPS_GEOM_REL = 1e-10
INSIDE_TOL_REL = 1e-12

# Roundoff negatives up to this fraction of ||x||_inf are clamped to zero
CLAMP_REL = 1e-13

# Slack used by every maximum-principle comparison
MAX_PRINCIPLE_REL = 1e-10

SQRT3 = math.sqrt(3.0)


def fingerprint(*arrays) -> str:
    """
    Content hash of a sequence of numpy arrays.

    Args:
        arrays: Arrays to hash (dtype and shape are part of the key)

    Returns:
        Hex digest string
    """
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def step_count(T: float, dt: float) -> int:
    """
    Number of uniform time steps N with N*dt = T.

    Args:
        T: Final time (> 0)
        dt: Time step (> 0)

    Returns:
        N as int

    Raises:
        ConfigError: if dt or T is not positive or T/dt is not integral
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ConfigError(f"time step must be positive, got {dt}", key='dt')
    if not (T > 0 and math.isfinite(T)):
        raise ConfigError(f"final time must be positive, got {T}", key='T')
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-12 * T:
        raise ConfigError(f"T/dt = {T / dt!r} is not an integer", key='dt')
    return n


def freeze(array) -> np.ndarray:
    """Return a read-only float/int array (copy if the input is writeable)."""
    a = np.array(array, copy=True)
    a.setflags(write=False)
    return a


def observed_order(coarse: float, fine: float) -> float:
    """log2 of the error ratio between two levels (NaN if undefined)."""
    if coarse <= 0.0 or fine <= 0.0:
        return float('nan')
    return math.log2(coarse / fine)
