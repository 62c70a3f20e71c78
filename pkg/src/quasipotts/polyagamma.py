"""Polya-Gamma PG(1, z) variates.

:func:`pg_draw` is exact (alternating-series accept/reject with an
exponential / truncated inverse-Gaussian envelope split at 0.64).
:func:`pg_oracle_draw` is the truncated sum-of-gammas representation, kept
as an independent reference for testing.
"""
import math

import numpy as np

from .kernels import pg_draw_many


def pg_mean(z):
    """E[PG(1, z)] = tanh(z/2) / (2z), with value 1/4 at z = 0."""
    z = np.abs(np.asarray(z, dtype=np.float64))
    small = z < 1e-6
    safe = np.where(small, 1.0, z)
    return np.where(small, 0.25 - z**2 / 48.0, np.tanh(safe / 2.0) / (2.0 * safe))


def pg_var(z):
    """Var[PG(1, z)]; 1/24 at z = 0."""
    z = np.abs(np.asarray(z, dtype=np.float64))
    small = z < 1e-3
    safe = np.where(small, 1.0, z)
    v = (np.sinh(safe) - safe) / (4.0 * safe**3 * np.cosh(safe / 2.0) ** 2)
    return np.where(small, 1.0 / 24.0 - z**2 / 120.0, v)


def pg_draw(z, rng, size=None):
    """Exact PG(1, |z|) draw(s).

    ``z`` may be a scalar or array; with ``size`` a scalar ``z`` is broadcast.
    Returns a float for scalar input without ``size``.
    """
    z_arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z_arr)):
        raise ValueError("z must be finite")
    if size is not None:
        z_arr = np.broadcast_to(z_arr, size)
    out = pg_draw_many(z_arr, rng).reshape(z_arr.shape)
    if out.ndim == 0:
        return float(out)
    return out


def pg_oracle_draw(z, terms: int, rng, size=None):
    """Truncated series draw (1 / 2 pi^2) sum_k g_k / ((k - 1/2)^2 + z^2 / 4 pi^2)."""
    if terms < 1:
        raise ValueError("terms must be >= 1")
    z_arr = np.asarray(z, dtype=np.float64)
    if size is not None:
        z_arr = np.broadcast_to(z_arr, size)
    k = np.arange(1, terms + 1, dtype=np.float64)
    denom = (k - 0.5) ** 2 + (z_arr[..., None] / (2.0 * math.pi)) ** 2
    g = rng.standard_gamma(1.0, size=denom.shape)
    out = (g / denom).sum(axis=-1) / (2.0 * math.pi**2)
    if out.ndim == 0:
        return float(out)
    return out
