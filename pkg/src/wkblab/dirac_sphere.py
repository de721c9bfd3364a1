"""Dirac eigenfunctions on round spheres and their L^q growth.

Gamma matrices follow the dimensional recursion (d = 2 base, gamma^3 =
-i gamma^1 gamma^2, block doubling for even d, top product matrix for odd d).
Eigenfunctions separate into half-angle powers times Jacobi polynomials,

    phi_{nl}(theta) = cos(theta/2)^{l+1} sin(theta/2)^l P_{n-l}^{(d/2+l-1, d/2+l)}(cos theta),

with eigenvalue +-(n + d/2).  The L^2 normalization constant is fixed by the
radial mass condition int (C^2/2)(phi^2 + psi^2) sin^{d-1} = 1 (the angular
factor being unit-normalized); in closed form

    C_d(n, l) = sqrt((n-l)! Gamma(n+l+d)) / (2^{d/2-1} Gamma(n+d/2)),

which reduces to sqrt((n-l)!(n+l+1)!)/(2^{d/2-1} n!) when d = 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.special import gammaln, roots_jacobi

from .strichartz import INF, gamma_wave
from .util import gauss_legendre, loglog_fit

from functools import lru_cache


@lru_cache(maxsize=256)
def _jacobi_nodes(n, a):
    """Gauss-Jacobi nodes/weights for weight (1-x^2)^a on [-1, 1]."""
    x, w = roots_jacobi(n, a, a)
    return x, w

__all__ = [
    "GammaSet",
    "SpinorEigenfunction",
    "gamma_matrices",
    "jacobi",
    "eigenfunction",
    "norm_constant",
    "radial_ode_residual",
    "lq_radial_norm",
    "sogge_fit",
    "jacobi_moment_fit",
    "sharpness_report",
    "sogge_exponent",
]


@dataclass(frozen=True)
class GammaSet:
    d: int
    matrices: tuple

    @property
    def size(self):
        return 2 ** (self.d // 2)


def gamma_matrices(d):
    """Gamma matrices for S^d by the dimensional recursion; exact entries."""
    if not 2 <= d <= 10:
        raise ValueError("gamma recursion implemented for 2 <= d <= 10")
    g1 = np.array([[0, 1j], [-1j, 0]])
    g2 = np.array([[0, 1], [1, 0]])
    mats = [g1, g2]
    for dim in range(3, d + 1):
        if dim == 3:
            mats = mats + [np.array([[1, 0], [0, -1]], dtype=complex)]
        elif dim % 2 == 0:
            n = mats[0].shape[0]
            Z = np.zeros((n, n), dtype=complex)
            new = [np.block([[Z, 1j * g], [-1j * g, Z]]) for g in mats]
            eye = np.eye(n, dtype=complex)
            new.append(np.block([[Z, eye], [eye, Z]]))
            mats = new
        else:
            top = mats[0]
            for g in mats[1:]:
                top = top @ g
            top = (1j) ** ((dim - 1) // 2) * top
            mats = mats + [top]
    return GammaSet(d=d, matrices=tuple(mats))


def jacobi(n, alpha, beta, x):
    """Jacobi polynomial value and derivative by the three-term recurrence.

    The derivative uses d/dx P_n^{(a,b)} = ((n+a+b+1)/2) P_{n-1}^{(a+1,b+1)}.
    """
    x = np.asarray(x, dtype=float)
    return _jacobi_value(n, alpha, beta, x), _jacobi_derivative(n, alpha, beta, x)


def _jacobi_value(n, alpha, beta, x):
    if n < 0:
        return np.zeros_like(x)
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev
    p = (alpha + 1) + (alpha + beta + 2) * (x - 1) / 2.0
    for m in range(2, n + 1):
        a = m + alpha
        b = m + beta
        c = 2 * m + alpha + beta
        coef0 = 2 * m * (m + alpha + beta) * (c - 2)
        coef1 = (c - 1) * (c * (c - 2) * x + alpha**2 - beta**2)
        coef2 = 2 * (a - 1) * (b - 1) * c
        p, p_prev = (coef1 * p - coef2 * p_prev) / coef0, p
    return p


def _jacobi_derivative(n, alpha, beta, x):
    if n == 0:
        return np.zeros_like(x)
    return 0.5 * (n + alpha + beta + 1) * _jacobi_value(n - 1, alpha + 1, beta + 1, x)


def _jacobi_second_derivative(n, alpha, beta, x):
    if n <= 1:
        return np.zeros_like(x)
    c = 0.25 * (n + alpha + beta + 1) * (n + alpha + beta + 2)
    return c * _jacobi_value(n - 2, alpha + 2, beta + 2, x)


def norm_constant(d, n, ell):
    """C_d(n, l) normalizing the radial L^2 mass to one."""
    log_c = (
        0.5 * (gammaln(n - ell + 1) + gammaln(n + ell + d))
        - (d / 2.0 - 1.0) * math.log(2.0)
        - gammaln(n + d / 2.0)
    )
    return math.exp(log_c)


@dataclass(frozen=True)
class SpinorEigenfunction:
    d: int
    n: int
    ell: int
    sign: int
    radial_phi: Callable
    radial_psi: Callable
    norm_const: float
    eigenvalue: float


def eigenfunction(d, n, ell, sign=+1):
    """Dirac eigenfunction data on S^d with eigenvalue sign (n + d/2)."""
    if ell < 0 or n < ell:
        raise ValueError("need n >= ell >= 0 for regular eigenfunctions")
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    a_phi, b_phi = d / 2.0 + ell - 1.0, d / 2.0 + ell

    def radial_phi(theta):
        theta = np.asarray(theta, dtype=float)
        c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
        return c ** (ell + 1) * s**ell * _jacobi_value(n - ell, a_phi, b_phi, np.cos(theta))

    def radial_psi(theta):
        theta = np.asarray(theta, dtype=float)
        c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
        return c**ell * s ** (ell + 1) * _jacobi_value(n - ell, b_phi, a_phi, np.cos(theta))

    return SpinorEigenfunction(
        d=d,
        n=n,
        ell=ell,
        sign=sign,
        radial_phi=radial_phi,
        radial_psi=radial_psi,
        norm_const=norm_constant(d, n, ell),
        eigenvalue=sign * (n + d / 2.0),
    )


def _phi_derivatives(f, theta):
    """(phi, phi', phi'') analytically via the Jacobi shift identities."""
    d, n, ell = f.d, f.n, f.ell
    a, b = d / 2.0 + ell - 1.0, d / 2.0 + ell
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    x = np.cos(theta)
    v = _jacobi_value(n - ell, a, b, x)
    dP = _jacobi_derivative(n - ell, a, b, x)
    d2P = _jacobi_second_derivative(n - ell, a, b, x)
    dx = -np.sin(theta)
    dv = dP * dx
    d2v = d2P * dx * dx - dP * np.cos(theta)
    # u = c^{l+1} s^l; every s power below is nonnegative for the l in range
    u = c ** (ell + 1) * s**ell
    du = -0.5 * (ell + 1) * c**ell * s ** (ell + 1)
    if ell >= 1:
        du = du + 0.5 * ell * c ** (ell + 2) * s ** (ell - 1)
    # d/dtheta [c^l s^{l+1}] = -(l/2) c^{l-1} s^{l+2} + ((l+1)/2) c^{l+1} s^l
    d2u = -0.5 * (ell + 1) * (0.5 * (ell + 1) * c ** (ell + 1) * s**ell)
    if ell >= 1:
        d2u = d2u + 0.5 * (ell + 1) * 0.5 * ell * c ** (ell - 1) * s ** (ell + 2)
        # d/dtheta [c^{l+2} s^{l-1}] = -((l+2)/2) c^{l+1} s^l + ((l-1)/2) c^{l+3} s^{l-2}
        d2u = d2u - 0.5 * ell * 0.5 * (ell + 2) * c ** (ell + 1) * s**ell
        if ell >= 2:
            d2u = d2u + 0.5 * ell * 0.5 * (ell - 1) * c ** (ell + 3) * s ** (ell - 2)
    phi = u * v
    dphi = du * v + u * dv
    d2phi = d2u * v + 2.0 * du * dv + u * d2v
    return phi, dphi, d2phi


def radial_ode_residual(f, theta_grid, *, eigenvalue_sq=None, pole_margin=1e-3):
    """Max relative residual of the squared radial Dirac equation on the grid.

    Evaluates [(d/dtheta + (d-1)/2 cot)^2 - (l+(d-1)/2)^2/sin^2
    + (l+(d-1)/2) cos/sin^2] phi + (n+d/2)^2 phi with analytic derivatives.
    """
    theta = np.asarray(theta_grid, dtype=float)
    if np.any(theta < pole_margin) or np.any(theta > math.pi - pole_margin):
        raise ValueError(f"theta grid must stay {pole_margin} away from the poles")
    d, n, ell = f.d, f.n, f.ell
    lam_sq = eigenvalue_sq if eigenvalue_sq is not None else (n + d / 2.0) ** 2
    phi, dphi, d2phi = _phi_derivatives(f, theta)
    cot = np.cos(theta) / np.sin(theta)
    csc2 = 1.0 / np.sin(theta) ** 2
    a = 0.5 * (d - 1)
    mu = ell + a
    # (d/dtheta + a cot)^2 phi = phi'' + a(-csc^2) phi + 2 a cot phi' + a^2 cot^2 phi
    sq = d2phi - a * csc2 * phi + 2.0 * a * cot * dphi + a**2 * cot**2 * phi
    resid = sq - mu**2 * csc2 * phi + mu * np.cos(theta) * csc2 * phi + lam_sq * phi
    return float(np.max(np.abs(resid)) / np.max(np.abs(phi)))


def lq_radial_norm(f, q, *, n_theta=None):
    """L^q norm of the radial spinor profile sqrt((C^2/2)(phi^2+psi^2)).

    Integration uses 4(n+20) Gauss-Jacobi nodes in cos theta matched to the
    polar measure (1-x^2)^{(d-2)/2} dx, so even q integrates the polynomial
    integrand exactly in every dimension; q = inf is a grid maximum.  The
    (n-independent) angular factor is excluded.
    """
    n_nodes = n_theta if n_theta is not None else 4 * (f.n + 20)
    x, w = _jacobi_nodes(n_nodes, (f.d - 2) / 2.0)
    theta = np.arccos(x)
    prof = 0.5 * f.norm_const**2 * (f.radial_phi(theta) ** 2 + f.radial_psi(theta) ** 2)
    if q == INF:
        return float(np.sqrt(prof.max()))
    return float(np.sum(w * prof ** (q / 2.0)) ** (1.0 / q))


def sogge_exponent(d, q):
    """s(q) = (d-1)/2 - d/q, exact when q is rational or inf."""
    if q == INF:
        return Fraction(d - 1, 2)
    return Fraction(d - 1, 2) - d * (Fraction(1) / Fraction(q))


def sogge_fit(d, ell, q, n_values, *, warn=True):
    """Least-squares slope of log lq_radial_norm against log(n + d/2).

    Below the Sogge threshold q = 2(d+1)/(d-1) the asymptotic is not claimed;
    a warning flag is returned instead of an error.
    """
    n_values = sorted(int(n) for n in n_values)
    threshold = Fraction(2 * (d + 1), d - 1)
    below = (q != INF) and (Fraction(q).limit_denominator(10**6) < threshold)
    norms = [lq_radial_norm(eigenfunction(d, n, ell), q) for n in n_values]
    lam = [n + d / 2.0 for n in n_values]
    slope, _, rms = loglog_fit(lam, norms)
    return {"slope": slope, "rms": rms, "below_threshold": below, "target": float(sogge_exponent(d, q)) if q == INF or q >= threshold else None}


def jacobi_moment_fit(alpha, beta, p, r, n_values):
    """Slope of log int_0^1 (1-x)^r |P_n^{(a,b)}|^p dx against log n.

    The asymptotic requires 2r < alpha p - 2 + p/2; violations are rejected.
    Expected exponent: alpha p - 2r - 2.
    """
    if not 2 * r < alpha * p - 2 + p / 2.0:
        raise ValueError(
            f"moment constraint violated: need 2r < alpha*p - 2 + p/2, "
            f"got {2*r} >= {alpha * p - 2 + p / 2.0}"
        )
    n_values = sorted(int(n) for n in n_values)
    moments = []
    for n in n_values:
        x, w = gauss_legendre(4 * (n + 20), 0.0, 1.0)
        vals = np.abs(_jacobi_value(n, alpha, beta, x)) ** p
        moments.append(float(np.sum(w * (1.0 - x) ** r * vals)))
    slope, _, rms = loglog_fit(n_values, moments)
    return {"slope": slope, "rms": rms, "target": alpha * p - 2 * r - 2}


def sharpness_report(d):
    """Exact-rational sharpness table for the wave Strichartz exponents.

    d >= 4: s(2(d-1)/(d-3)) = gamma^W(2, 2(d-1)/(d-3)) = (d+1)/(2(d-1)).
    d = 2: the pair (gamma^W(4, inf), s(inf)) = (3/4, 1/2).
    d = 3: the epsilon-family near the excluded endpoint (2, inf).
    """
    if d < 2:
        raise ValueError("sharpness analysis needs d >= 2")
    if d == 2:
        return {
            "d": 2,
            "kind": "gap",
            "gamma_w": gamma_wave(4, INF, 2),
            "s": sogge_exponent(2, INF),
            "gap": gamma_wave(4, INF, 2) - sogge_exponent(2, INF),
        }
    if d == 3:
        rows = []
        for eps in (Fraction(1, 2), Fraction(1, 10), Fraction(1, 100)):
            p = 2 + eps
            q = 2 * (2 + eps) / eps
            gam = gamma_wave(p, q, 3)
            s = sogge_exponent(3, q)
            rows.append({"eps": eps, "gamma_w": gam, "s": s, "gap": gam - s})
        return {"d": 3, "kind": "eps_family", "rows": rows, "limit_equal": True}
    q = Fraction(2 * (d - 1), d - 3)
    gam = gamma_wave(2, q, d)
    s = sogge_exponent(d, q)
    target = Fraction(d + 1, 2 * (d - 1))
    return {
        "d": d,
        "kind": "equality",
        "q": q,
        "gamma_w": gam,
        "s": s,
        "target": target,
        "equal": gam == s == target,
    }
