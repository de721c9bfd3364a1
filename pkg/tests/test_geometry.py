"""Charts, ellipticity and the regularized square-root cutoffs."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wkblab.geometry import (
    CutoffLibrary,
    MassParam,
    NonEllipticError,
    ellipticity_bounds,
    flat_chart,
    make_cutoffs,
    perturbed_flat_chart,
    principal_symbol,
    sphere_polar_chart,
    symbol_sqrt,
)


def grid2(n=64, lim=2.0):
    xs = np.linspace(-lim, lim, n)
    return np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)


def test_mass_param():
    assert MassParam.from_mass(2.0).m_tilde == 2.0
    assert MassParam.from_mass(0.0).m_tilde == 1.0
    with pytest.raises(ValueError):
        MassParam.from_mass(-1.0)


def test_flat_chart_identity():
    ch = flat_chart(3)
    x = np.array([0.3, -1.0, 2.0])
    assert_allclose(ch.metric_inverse(x), np.eye(3))
    assert np.all(ch.christoffel(x) == 0.0)
    assert ch.sqrt_det(x) == pytest.approx(1.0)
    pts3 = np.stack([np.linspace(-2, 2, 8)] * 3, axis=-1)
    assert ellipticity_bounds(ch, pts3) == 1.0


def test_metric_times_inverse_is_identity():
    for ch in (flat_chart(2), perturbed_flat_chart(2), sphere_polar_chart(2)):
        pts = grid2(9, 1.4) if ch.kind != "sphere_polar" else np.stack(
            [np.linspace(0.3, 2.8, 9), np.linspace(0.1, 6.0, 9)], axis=-1
        )
        G = ch.metric_inverse(pts)
        g = ch.metric(pts)
        assert_allclose(G @ g, np.broadcast_to(np.eye(2), G.shape), atol=1e-12)


def test_ellipticity_examples():
    # eigenvalue-sweep oracle over a 64^2 grid
    ch = perturbed_flat_chart(2, epsilon=0.2)
    C = ellipticity_bounds(ch, grid2(64))
    eig = np.linalg.eigvalsh(ch.metric_inverse(grid2(64)))
    C_oracle = max(1.0, eig.max(), 1.0 / eig.min())
    assert C == pytest.approx(C_oracle)
    assert C <= 1.25
    with pytest.raises(NonEllipticError) as exc:
        ellipticity_bounds(perturbed_flat_chart(2, epsilon=2.0), grid2(64))
    assert exc.value.point is not None


def test_perturbation_vanishes_outside_bump():
    ch = perturbed_flat_chart(2, epsilon=0.3, radius=1.0)
    far = np.array([[1.8, 0.0], [0.0, -1.5], [3.0, 3.0]])
    assert_allclose(ch.metric_inverse(far), np.broadcast_to(np.eye(2), (3, 2, 2)))
    assert_allclose(ch.christoffel(far), 0.0, atol=1e-15)


def test_christoffel_against_finite_differences():
    ch = perturbed_flat_chart(2, epsilon=0.2)
    x = np.array([0.31, -0.22])
    eps = 1e-6
    dg = np.empty((2, 2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = eps
        dg[j] = (ch.metric(x + e) - ch.metric(x - e)) / (2 * eps)
    G = ch.metric_inverse(x)
    # oracle: Gamma^i_{jk} = 1/2 G^{il} (d_j g_{lk} + d_k g_{jl} - d_l g_{jk}) from FD metric
    term = np.empty((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                term[i, j, k] = sum(
                    0.5 * G[i, l] * (dg[j, l, k] + dg[k, j, l] - dg[l, j, k]) for l in range(2)
                )
    assert_allclose(ch.christoffel(x), term, atol=1e-8)


def test_sphere_polar_christoffel_matches_closed_form():
    ch = sphere_polar_chart(2)
    th = 1.1
    x = np.array([th, 0.4])
    Gam = ch.christoffel(x)
    assert Gam[0, 1, 1] == pytest.approx(-math.sin(th) * math.cos(th), rel=1e-12)
    assert Gam[1, 0, 1] == pytest.approx(1.0 / math.tan(th), rel=1e-12)
    assert ch.sqrt_det(x) == pytest.approx(math.sin(th), rel=1e-12)


def test_metric_derivative_bounds_grid_independent():
    # |d^alpha G| estimates stabilize under grid refinement (smoothness bound)
    ch = perturbed_flat_chart(2)
    bounds = []
    for n in (21, 41):
        pts = grid2(n, 1.3)
        d1 = np.abs(ch.dG(pts)).max()
        d2 = np.abs(ch.d2G(pts)).max()
        eps = 1e-4
        e0 = np.zeros(2)
        e0[0] = eps
        d3 = np.abs((ch.d2G(pts + e0) - ch.d2G(pts - e0)) / (2 * eps)).max()
        bounds.append((d1, d2, d3))
    for a, b in zip(*bounds):
        assert b <= 1.5 * a + 1e-12


def test_principal_symbol_values():
    m = MassParam.from_mass(1.0)
    ch = flat_chart(2)
    assert principal_symbol(ch, m, 0.5, np.zeros(2), np.array([1.0, 0.0])) == pytest.approx(1.25)
    # m = 0 branch still regularizes with m_tilde = 1; h -> 0 recovers |xi|^2
    m0 = MassParam.from_mass(0.0)
    assert principal_symbol(ch, m0, 1e-8, np.zeros(2), np.array([1.0, 0.0])) == pytest.approx(1.0)
    pert = perturbed_flat_chart(2)
    far = np.array([2.5, 0.0])
    assert principal_symbol(pert, m, 0.5, far, np.array([1.0, 1.0])) == pytest.approx(
        principal_symbol(ch, m, 0.5, far, np.array([1.0, 1.0]))
    )
    with pytest.raises(ValueError):
        principal_symbol(ch, m, 1.5, np.zeros(2), np.array([1.0, 0.0]))


def test_symbol_sqrt_exact_on_plateau():
    m = MassParam.from_mass(1.0)
    lib = make_cutoffs(m)
    ch = flat_chart(2)
    x = np.zeros(2)
    xi = np.array([1.0, 0.0])
    assert symbol_sqrt(lib, ch, m, 1.0, x, xi) == pytest.approx(math.sqrt(2.0), rel=1e-14)
    # squaring reproduces the principal symbol wherever psi_tilde = 1
    for h in (1.0, 0.5, 0.0625):
        for r in (0.55, 1.0, 1.9):
            xi = np.array([r, 0.3])
            p = principal_symbol(ch, m, h, x, xi)
            assert symbol_sqrt(lib, ch, m, h, x, xi) ** 2 == pytest.approx(p, abs=1e-12)
    # psi vanishes outside supp psi_tilde
    assert lib.psi(np.array([lib.psi_tilde.hi * 1.5]))[0] == 0.0
    assert lib.psi(np.array([-1.0]))[0] == 0.0


def test_symbol_sqrt_derivatives_bounded_in_h():
    # finite-difference sweep: value and two xi-derivatives uniform over h
    m = MassParam.from_mass(1.0)
    lib = make_cutoffs(m)
    ch = flat_chart(1)
    x = np.zeros(1)
    eps = 1e-4
    sup = []
    for h in [2.0**-k for k in range(0, 7)]:
        vals = []
        for r in np.sqrt(np.linspace(*lib.support, 9))[1:-1]:
            xi = np.array([r])
            f0 = symbol_sqrt(lib, ch, m, h, x, xi)
            fp = symbol_sqrt(lib, ch, m, h, x, xi + eps)
            fm = symbol_sqrt(lib, ch, m, h, x, xi - eps)
            vals.append(max(abs(f0), abs((fp - fm) / (2 * eps)), abs((fp - 2 * f0 + fm) / eps**2)))
        sup.append(max(vals))
    assert max(sup) <= 3.0 * min(sup) + 3.0


def test_kg_branch_support_constraint():
    m = MassParam.from_mass(1.0)
    lib = make_cutoffs(m, branch="kg")
    lam = np.linspace(-2.0, 2.0, 41)
    assert np.all(lib.phi(lam) == 0.0)
    with pytest.raises(ValueError):
        make_cutoffs(m, branch="kg", support=(1.0, 8.0))


def test_psi_tilde_covers_shifted_support():
    for m_val in (0.0, 1.0, 2.5):
        m = MassParam.from_mass(m_val)
        lib = make_cutoffs(m, branch="wave" if m_val <= 1 else "kg",
                           support=None if m_val <= 1 else (2.5 * m.m_tilde**2, 10 * m.m_tilde**2))
        a, b = lib.support
        for h in (1.0, 0.5, 0.1, 0.01):
            lam = np.linspace(a, b, 33) + h**2 * m.m_tilde**2
            assert np.all(lib.psi_tilde(lam) == 1.0), (m_val, h)
