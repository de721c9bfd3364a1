"""Shared numeric utilities: deterministic reductions, quadrature, fits."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

__all__ = ["pairwise_sum", "gauss_legendre", "trapezoid_weights", "loglog_fit", "plane_fit"]


def pairwise_sum(values, axis=-1):
    """Sum by pairwise tree folding.

    The reduction order depends only on the array length, never on how work
    was chunked across workers, so parallel sweeps that concatenate partial
    results in a fixed order reproduce bitwise.
    """
    a = np.asarray(values)
    a = np.moveaxis(a, axis, -1)
    while a.shape[-1] > 1:
        n = a.shape[-1]
        half = n // 2
        folded = a[..., :half] + a[..., half : 2 * half]
        if n % 2:
            folded = np.concatenate([folded, a[..., -1:]], axis=-1)
        a = folded
    return a[..., 0]


@lru_cache(maxsize=128)
def gauss_legendre(n, lo=-1.0, hi=1.0):
    """Cached Gauss-Legendre nodes/weights on [lo, hi]."""
    x, w = roots_legendre(n)
    mid, rad = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return mid + rad * x, rad * w


def trapezoid_weights(ts):
    """Trapezoid-rule quadrature weights for a 1-d sample grid."""
    ts = np.asarray(ts, dtype=float)
    w = np.zeros_like(ts)
    dt = np.diff(ts)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def loglog_fit(x, y):
    """Least-squares slope/intercept of log y against log x.

    Returns (slope, intercept, rms_residual) in natural-log units.
    """
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    return float(coef[0]), float(coef[1]), rms


def plane_fit(u, v, y):
    """Fit y = c0 + c1*u + c2*v by least squares; returns (c, rms_residual)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.stack([np.ones_like(u), u, v], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    return coef, rms
