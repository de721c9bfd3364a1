"""Model manifolds as coordinate charts with uniformly elliptic metrics.

Charts expose the inverse metric G(x) = (g^{jk}(x)) together with its first
and second coordinate derivatives in closed form, the metric, volume density
and Christoffel symbols; everything is vectorized over a leading batch axis.
The module also builds the regularized square-root cutoffs used by the
h-dependent symbol machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bumps import LowStep, PlateauBump, unit_bump_w

__all__ = [
    "MassParam",
    "MetricChart",
    "CutoffLibrary",
    "NonEllipticError",
    "flat_chart",
    "perturbed_flat_chart",
    "sphere_polar_chart",
    "make_cutoffs",
    "ellipticity_bounds",
    "principal_symbol",
    "symbol_sqrt",
]


class NonEllipticError(ValueError):
    """Raised when G(x) fails to be positive definite at a sampled point."""

    def __init__(self, point, eigenvalue):
        self.point = np.asarray(point)
        self.eigenvalue = float(eigenvalue)
        super().__init__(
            f"metric inverse not positive definite at x={self.point.tolist()} "
            f"(eigenvalue {self.eigenvalue:.6g})"
        )


@dataclass(frozen=True)
class MassParam:
    """Mass m >= 0 and the regularized m_tilde (= m if m > 0, else 1)."""

    m: float
    m_tilde: float

    @classmethod
    def from_mass(cls, m):
        m = float(m)
        if m < 0:
            raise ValueError("mass must be nonnegative")
        return cls(m=m, m_tilde=m if m > 0 else 1.0)


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"point has dim {x.shape[0]}, chart has dim {dim}")
        return x[None, :], True
    if x.shape[-1] != dim:
        raise ValueError(f"points have dim {x.shape[-1]}, chart has dim {dim}")
    return x.reshape(-1, dim), False


@dataclass(frozen=True)
class MetricChart:
    """A metric chart; `kind` is one of flat, perturbed_flat, sphere_polar."""

    kind: str
    dim: int
    params: dict = field(default_factory=dict)

    # -- inverse metric and its coordinate derivatives ------------------

    def metric_inverse(self, x):
        """G(x) = (g^{jk}(x)), shape (..., d, d)."""
        xb, single = _as_batch(x, self.dim)
        G = self._G(xb)
        return G[0] if single else G.reshape(np.asarray(x).shape[:-1] + (self.dim, self.dim))

    def dG(self, x):
        """dG[..., j, k, l] = d/dx_j G^{kl}(x)."""
        xb, single = _as_batch(x, self.dim)
        out = self._dG(xb)
        d = self.dim
        return out[0] if single else out.reshape(np.asarray(x).shape[:-1] + (d, d, d))

    def d2G(self, x):
        """d2G[..., i, j, k, l] = d/dx_i d/dx_j G^{kl}(x)."""
        xb, single = _as_batch(x, self.dim)
        out = self._d2G(xb)
        d = self.dim
        return out[0] if single else out.reshape(np.asarray(x).shape[:-1] + (d, d, d, d))

    def metric(self, x):
        """g(x) = G(x)^{-1}."""
        return np.linalg.inv(self.metric_inverse(x))

    def sqrt_det(self, x):
        """sqrt(det g(x))."""
        G = self.metric_inverse(x)
        return 1.0 / np.sqrt(np.linalg.det(G))

    def christoffel(self, x):
        """Gamma^i_{jk} = (1/2) g^{il} (d_j g_{lk} + d_k g_{jl} - d_l g_{jk})."""
        G = self.metric_inverse(x)
        g = np.linalg.inv(G)
        dG = self.dG(x)
        # d_j g = -g (d_j G) g
        dg = -np.einsum("...kl,...jlm,...mn->...jkn", g, dG, g)
        term = dg + np.einsum("...kjl->...jkl", dg) - np.einsum("...ljk->...jkl", dg)
        return 0.5 * np.einsum("...il,...jkl->...ijk", G, term)

    # -- chart kinds ----------------------------------------------------

    def _G(self, xb):
        d = self.dim
        n = xb.shape[0]
        if self.kind == "flat":
            return np.broadcast_to(np.eye(d), (n, d, d)).copy()
        if self.kind == "perturbed_flat":
            eps, x0, r, M = self._pf()
            u = xb - x0
            w = np.einsum("bi,bi->b", u, u) / r**2
            b = unit_bump_w(w)
            return np.eye(d) + eps * b[:, None, None] * M
        if self.kind == "sphere_polar":
            # hyperspherical coordinates: g_ii = prod_{j<i} sin^2 x_j
            G = np.zeros((n, d, d))
            acc = np.ones(n)
            for i in range(d):
                G[:, i, i] = 1.0 / acc
                if i < d - 1:
                    acc = acc * np.sin(xb[:, i]) ** 2
            return G
        raise ValueError(f"unknown chart kind {self.kind!r}")

    def _dG(self, xb):
        d = self.dim
        n = xb.shape[0]
        out = np.zeros((n, d, d, d))
        if self.kind == "flat":
            return out
        if self.kind == "perturbed_flat":
            eps, x0, r, M = self._pf()
            u = xb - x0
            w = np.einsum("bi,bi->b", u, u) / r**2
            _, bw = unit_bump_w(w, order=1)
            # d_j b = b'(w) * 2 u_j / r^2
            out += eps * (bw[:, None] * 2.0 * u / r**2)[:, :, None, None] * M
            return out
        if self.kind == "sphere_polar":
            G = self._G(xb)
            for k in range(d):
                cot = np.cos(xb[:, k]) / np.sin(xb[:, k])
                for i in range(k + 1, d):
                    out[:, k, i, i] = -2.0 * cot * G[:, i, i]
            return out
        raise ValueError(f"unknown chart kind {self.kind!r}")

    def _d2G(self, xb):
        d = self.dim
        n = xb.shape[0]
        out = np.zeros((n, d, d, d, d))
        if self.kind == "flat":
            return out
        if self.kind == "perturbed_flat":
            eps, x0, r, M = self._pf()
            u = xb - x0
            w = np.einsum("bi,bi->b", u, u) / r**2
            _, bw, bww = unit_bump_w(w, order=2)
            du = 2.0 * u / r**2  # d_j w
            quad = bww[:, None, None] * du[:, :, None] * du[:, None, :]
            diag = (bw * 2.0 / r**2)[:, None, None] * np.eye(d)
            out += eps * (quad + diag)[:, :, :, None, None] * M
            return out
        if self.kind == "sphere_polar":
            G = self._G(xb)
            sin = np.sin(xb)
            cot = np.cos(xb) / sin
            csc2 = 1.0 / sin**2
            for k in range(d):
                for l in range(d):
                    for i in range(max(k, l) + 1, d):
                        if k == l:
                            out[:, k, l, i, i] = (2.0 * csc2[:, k] + 4.0 * cot[:, k] ** 2) * G[:, i, i]
                        else:
                            out[:, k, l, i, i] = 4.0 * cot[:, k] * cot[:, l] * G[:, i, i]
            return out
        raise ValueError(f"unknown chart kind {self.kind!r}")

    def _pf(self):
        p = self.params
        return p["epsilon"], p["center"], p["radius"], p["pattern"]


def flat_chart(dim):
    return MetricChart(kind="flat", dim=int(dim))


def _default_pattern(d):
    # fixed symmetric pattern with spectral radius < 1 so that epsilon <= 1
    # keeps ellipticity while epsilon = 2 provably loses it
    M = 0.8 * np.diag([(-1.0) ** i for i in range(d)])
    if d >= 2:
        M[0, 1] = M[1, 0] = 0.3
    return M


def perturbed_flat_chart(dim, epsilon=0.15, center=None, radius=1.0):
    dim = int(dim)
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    return MetricChart(
        kind="perturbed_flat",
        dim=dim,
        params={
            "epsilon": float(epsilon),
            "center": center,
            "radius": float(radius),
            "pattern": _default_pattern(dim),
        },
    )


def sphere_polar_chart(dim):
    """Geodesic polar chart on S^d minus poles; quadrature measure sin^{d-1}."""
    return MetricChart(kind="sphere_polar", dim=int(dim))


# ---------------------------------------------------------------------------
# cutoffs


@dataclass(frozen=True)
class CutoffLibrary:
    """Frequency cutoffs tied to a mass: phi, psi_tilde and psi = psi_tilde*sqrt.

    phi is an annulus bump in lambda = p_{0,0}(x, xi); psi_tilde equals 1 on
    every value lambda + h^2 m_tilde^2 reachable with lambda in supp phi and
    h in (0, 1], so psi(lambda) = sqrt(lambda) exactly on that set.
    """

    phi: PlateauBump
    psi_tilde: PlateauBump
    phi_tilde_lp: LowStep
    mass: MassParam

    @property
    def support(self):
        return self.phi.support

    def psi(self, lam, order=0):
        """psi(lam) = psi_tilde(lam) * sqrt(lam), with derivatives up to 4.

        Outside supp psi_tilde the value is 0 regardless of the sign of lam.
        """
        lam = np.asarray(lam, dtype=float)
        pt = self.psi_tilde(lam, order=max(order, 0) if order else 0)
        if order == 0:
            out = np.zeros(lam.shape)
            mask = pt > 0
            out[mask] = pt[mask] * np.sqrt(lam[mask])
            return out
        pt = self.psi_tilde(lam, order=order)
        mask = pt[0] > 0
        out = [np.zeros(lam.shape) for _ in range(order + 1)]
        lm = lam[mask]
        # derivatives of sqrt on the masked (strictly positive) set
        root = [np.sqrt(lm)]
        coeff = 0.5
        for k in range(1, order + 1):
            root.append(coeff * lm ** (0.5 - k))
            coeff *= 0.5 - k
        for k in range(order + 1):
            acc = 0.0
            for j in range(k + 1):
                acc = acc + math.comb(k, j) * pt[j][mask] * root[k - j]
            out[k][mask] = acc
        return out


def make_cutoffs(mass, branch="wave", support=None):
    """Build the CutoffLibrary for a mass and branch.

    wave branch: supp phi defaults to [1/4, 4] (plateau [1/2, 2]).
    kg branch: supp phi must avoid [-2 m_tilde^2, 2 m_tilde^2]; defaults to
    [2.5, 10] * m_tilde^2.
    """
    if isinstance(mass, (int, float)):
        mass = MassParam.from_mass(mass)
    mt2 = mass.m_tilde**2
    if support is None:
        support = (2.5 * mt2, 10.0 * mt2) if branch == "kg" else (0.25, 4.0)
    a, b = float(support[0]), float(support[1])
    if a <= 0 or b <= a:
        raise ValueError("phi support must satisfy 0 < a < b")
    if branch == "kg" and a <= 2.0 * mt2:
        raise ValueError(
            f"kg-branch phi must vanish on [-2 m_tilde^2, 2 m_tilde^2]; "
            f"need support lo > {2.0 * mt2:.6g}, got {a:.6g}"
        )
    kappa = (b / a) ** 0.25
    phi = PlateauBump(lo=a, plateau_lo=a * kappa, plateau_hi=b / kappa, hi=b)
    plateau_lo = max(a / 4.0, a / 2.0 - 1.0)
    plateau_hi = 2.0 * b + 2.0 * max(1.0, mt2)
    psi_tilde = PlateauBump(
        lo=plateau_lo / 2.0,
        plateau_lo=plateau_lo,
        plateau_hi=plateau_hi,
        hi=2.0 * plateau_hi,
    )
    return CutoffLibrary(
        phi=phi,
        psi_tilde=psi_tilde,
        phi_tilde_lp=LowStep(edge_lo=1.0, edge_hi=4.0),
        mass=mass,
    )


# ---------------------------------------------------------------------------
# operations


def ellipticity_bounds(chart, grid):
    """Smallest C >= 1 with eig G(x) in [1/C, C] over the grid.

    Raises NonEllipticError naming the offending point if G loses positive
    definiteness anywhere.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    pts = grid.reshape(-1, chart.dim)
    G = chart.metric_inverse(pts)
    eig = np.linalg.eigvalsh(G)
    lo = eig.min(axis=-1)
    if np.any(lo <= 0):
        idx = int(np.argmin(lo))
        raise NonEllipticError(pts[idx], lo[idx])
    return float(max(1.0, eig.max(), 1.0 / lo.min()))


def principal_symbol(chart, mass, h, x, xi):
    """p_{m_tilde,h}(x, xi) = xi^T G(x) xi + h^2 m_tilde^2."""
    h = float(h)
    if not (0.0 < h <= 1.0):
        raise ValueError("h must lie in (0, 1]")
    G = chart.metric_inverse(x)
    xi = np.asarray(xi, dtype=float)
    quad = np.einsum("...jk,...j,...k->...", G, xi, xi)
    return quad + h**2 * mass.m_tilde**2


def symbol_sqrt(library, chart, mass, h, x, xi):
    """psi(p_{m_tilde,h})(x, xi): equals sqrt(p) wherever psi_tilde = 1."""
    p = principal_symbol(chart, mass, h, x, xi)
    return library.psi(p)
