"""Exponent algebra, dyadic partitions, spectral models and mixed norms."""

import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st_h
from numpy.testing import assert_allclose

from wkblab.util import trapezoid_weights
from wkblab.strichartz import (
    INF,
    AdmissiblePair,
    SphereZonalModel,
    TorusModel,
    build_partition,
    classify,
    exponents,
    gamma_kg,
    gamma_wave,
    loss_exponent_fit,
    mixed_norm,
    residual_trend,
    spectral_propagate,
    trial_coefficients,
    tt_star_exponent,
)


def test_classify_examples():
    assert classify(8, 4, 2) == {"wave", "schrodinger"}
    assert "wave" not in classify(2, INF, 3)
    assert "schrodinger" not in classify(2, INF, 2)
    assert classify(1, 4, 2) == set()  # p < 2


def test_classify_monotone_in_q():
    for d in (2, 3, 4):
        for p in (2, 3, 4, 8):
            admissible_seen = False
            for q in [2, 3, 4, 6, 12, 100]:
                cls = classify(p, q, d)
                if "wave" in cls:
                    admissible_seen = True
                elif admissible_seen and not (p == 2 and q == INF and d == 3):
                    pytest.fail(f"admissibility lost at (p={p}, q={q}, d={d})")


@settings(max_examples=200, deadline=None)
@given(
    p=st_h.fractions(min_value=2, max_value=60),
    q=st_h.fractions(min_value=2, max_value=60),
    d=st_h.integers(min_value=2, max_value=9),
)
def test_gamma_gap_identity(p, q, d):
    # gamma^KG - gamma^W = 1/2 - 1/q >= 0, exactly
    assert gamma_kg(p, q, d) - gamma_wave(p, q, d) == F(1, 2) - 1 / q


@settings(max_examples=100, deadline=None)
@given(
    p=st_h.fractions(min_value=2, max_value=60),
    q=st_h.fractions(min_value=2, max_value=60),
    d=st_h.integers(min_value=2, max_value=9),
)
def test_tt_star_substitution(p, q, d):
    # delta = d, tau = (d-1)/2 reproduces gamma^W when admissible; same for KG
    if 2 / p + (d - 1) / q <= F(d - 1, 2):
        assert tt_star_exponent(d, F(d - 1, 2), p, q) == gamma_wave(p, q, d)
    if 2 / p + d / q <= F(d, 2):
        assert tt_star_exponent(d + 1, F(d, 2), p, q) == gamma_kg(p, q, d)


def test_tt_star_endpoint_exclusion():
    with pytest.raises(ValueError):
        tt_star_exponent(2, 1, 2, INF)
    with pytest.raises(ValueError):
        tt_star_exponent(3, F(1, 2), 2, 4)  # precondition violated


def test_exponent_examples():
    assert gamma_wave(4, INF, 2) == F(3, 4)
    assert gamma_wave(2, 6, 4) == F(5, 6)
    rep = exponents(AdmissiblePair(2, 6, 3, "schrodinger"))
    assert rep.predicted_loss == F(5, 6) + F(1, 4)
    rep_w = exponents(AdmissiblePair(8, 4, 2, "wave"))
    assert rep_w.kappa == rep_w.gamma_w == F(3, 8)


def test_endpoint_identity_exact():
    for d in range(4, 10):
        q = F(2 * (d - 1), d - 3)
        assert gamma_wave(2, q, d) == F(d + 1, 2 * (d - 1))


def test_admissible_pair_rejects():
    with pytest.raises(ValueError):
        AdmissiblePair(2, INF, 2, "schrodinger")


def test_partition_identity_and_supports():
    part = build_partition(8)
    lam = np.array([0.0])
    assert part.phi_tilde_lp(lam)[0] == 1.0
    assert part.phi(lam)[0] == 0.0
    # at a deep dyadic point at most two consecutive terms are nonzero
    for lam0 in (4.0**3, 4.0**5 * 1.7):
        terms = [part.phi(np.array([lam0 * 4.0**-k]))[0] for k in range(1, 9)]
        assert sum(1 for v in terms if v > 1e-14) <= 2
    # partial sums are monotone in K at fixed lambda
    lam = np.array([37.0])
    partials = []
    total = part.phi_tilde_lp(lam)[0]
    for k in range(1, 9):
        total += part.phi(lam * 4.0**-k)[0]
        partials.append(total)
    assert all(b >= a - 1e-15 for a, b in zip(partials, partials[1:]))


def test_partition_identity_tolerance():
    part = build_partition(6)
    lam = np.geomspace(1e-2, 2.0**11, 2048)
    assert np.max(np.abs(part.partition_sum(lam) - 1.0)) <= 1e-10


def test_torus_single_mode_evolution():
    tm = TorusModel(2)
    modes = np.array([[3, -2]])
    c = np.array([1.0 + 0j])
    t, m = 0.37, 1.0
    u = spectral_propagate(tm, m, t, modes, c, 64)
    lam = 13.0
    xs = 2 * math.pi * np.arange(64) / 64
    expect = np.exp(1j * t * math.sqrt(m**2 + lam)) * np.exp(
        1j * (3 * xs[:, None] - 2 * xs[None, :])
    )
    assert_allclose(u, expect, atol=1e-10)


def test_torus_l2_conserved_over_time():
    tm = TorusModel(2)
    part = build_partition(6)
    modes, c = trial_coefficients(part, tm, 3, 5, seed=11)
    for t in np.linspace(0.0, 1.0, 5):
        u = spectral_propagate(tm, 0.0, t, modes, c, 64)
        l2_grid = math.sqrt(float(np.sum(np.abs(u) ** 2) / 64**2))
        assert l2_grid == pytest.approx(np.linalg.norm(c), rel=1e-12)


def test_propagation_commutes_with_partition_multiplier():
    tm = TorusModel(2)
    part = build_partition(6)
    modes, c = trial_coefficients(part, tm, 3, 2, seed=5)
    mult = part.multiplier(3, tm.eigenvalue(modes))
    u1 = spectral_propagate(tm, 1.0, 0.3, modes, c * mult, 64)
    lam = tm.eigenvalue(modes)
    phased = c * np.exp(1j * 0.3 * np.sqrt(1.0 + lam))
    u2 = tm.synthesize(modes, phased * mult, 64)
    assert_allclose(u1, u2, atol=1e-12)


def test_mixed_norm_constant_and_l2():
    Nt, Nx = 9, 16
    ts = np.linspace(0.0, 2.0, Nt)
    tw = trapezoid_weights(ts)
    xw = np.full(Nx, 1.0 / Nx)
    samples = np.full((Nt, Nx), 3.0)
    assert mixed_norm(samples, 4, 7, tw, xw) == pytest.approx(2.0**0.25 * 3.0)
    assert mixed_norm(samples, INF, INF, tw, xw) == pytest.approx(3.0)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((Nt, Nx))
    direct = math.sqrt(float(np.einsum("t,tx->", tw, u**2) / Nx))
    assert mixed_norm(u, 2, 2, tw, xw) == pytest.approx(direct)


def test_mixed_norm_refinement_stability():
    # band-limited data: doubling both grids moves the norm by < 1%
    tm = TorusModel(1)
    modes = np.array([[1], [3], [-2]])
    c = np.array([1.0, 0.5j, 0.25])
    vals = []
    for (Nt, M) in ((17, 16), (33, 32)):
        ts = np.linspace(0.0, 1.0, Nt)
        tw = trapezoid_weights(ts)
        samples = np.stack([np.abs(spectral_propagate(tm, 0.0, t, modes, c, M)) for t in ts])
        vals.append(mixed_norm(samples, 4, 4, tw, tm.grid_weights(M)))
    assert abs(vals[1] - vals[0]) < 0.01 * vals[0]


def test_sphere_zonal_model_basics():
    sm = SphereZonalModel(2, n_theta=256)
    e3 = sm.basis(3)
    assert float(np.sum(sm.weights * e3**2)) == pytest.approx(1.0, abs=1e-12)
    e5 = sm.basis(5)
    assert abs(float(np.sum(sm.weights * e3 * e5))) < 1e-12
    u = spectral_propagate(sm, 1.0, 0.4, [3], np.array([2.0 + 0j]))
    lam = 3 * (3 + 1)
    assert_allclose(u, 2.0 * np.exp(1j * 0.4 * math.sqrt(1 + lam)) * e3, atol=1e-12)


def test_trial_coefficients_deterministic():
    tm = TorusModel(2)
    part = build_partition(6)
    _, c1 = trial_coefficients(part, tm, 4, 7, seed=123)
    _, c2 = trial_coefficients(part, tm, 4, 7, seed=123)
    assert np.array_equal(c1, c2)
    _, c3 = trial_coefficients(part, tm, 4, 7, seed=124)
    assert not np.array_equal(c1, c3)
    assert np.linalg.norm(c1) == pytest.approx(1.0)


def test_constant_frequency_family_slope_zero():
    # single-mode trials alone: quotient independent of the shell
    tm = TorusModel(2)
    part = build_partition(9)
    ts = np.linspace(0.0, 1.0, 9)
    tw = trapezoid_weights(ts)
    qs = []
    for k in (3, 4, 5, 6):
        modes, c = trial_coefficients(part, tm, k, 1, seed=0)
        M = 2 ** (k + 2)
        samples = np.stack([np.abs(spectral_propagate(tm, 0.0, t, modes, c, M)).ravel() for t in ts])
        qs.append(mixed_norm(samples, 8, 4, tw, tm.grid_weights(M)))
    slope = np.polyfit([k * math.log(2) for k in (3, 4, 5, 6)], np.log(qs), 1)[0]
    assert abs(slope) < 1e-6


def test_loss_fit_needs_enough_shells():
    tm = TorusModel(2)
    with pytest.raises(ValueError):
        loss_exponent_fit(tm, 0.0, AdmissiblePair(8, 4, 2, "wave"), [3, 4, 5], seed=0)
