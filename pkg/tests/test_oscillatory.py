"""Kernel quadrature, Hessian structure, stationary phase, Van der Corput."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wkblab.bumps import unit_bump
from wkblab.geometry import MassParam, flat_chart, make_cutoffs, perturbed_flat_chart
from wkblab.hamilton_jacobi import build_phase_field
from wkblab.oscillatory import (
    KernelRequest,
    ResolutionError,
    decay_windows,
    hessian_spectrum,
    kernel_eval,
    kernel_nodes_required,
    reduced_phase_1d,
    reduced_phase_second_derivative,
    sp_quadrature,
    stationary_phase_reference,
    van_der_corput_check,
)
from wkblab.util import gauss_legendre
from wkblab.wkb import LowerOrderSymbols, make_leading_amplitude

M1 = MassParam.from_mass(1.0)
M0 = MassParam.from_mass(0.0)


def test_kernel_at_t0_coincidence():
    # L_h(0, x, x) = (2 pi h)^{-d} int phi(|xi|^2) dxi
    chart = flat_chart(2)
    lib = make_cutoffs(M1)
    h = 0.25
    phase = build_phase_field(chart, M1, lib, h, t_max=1.0)
    req = KernelRequest(chart, M1, lib, h, 0.0, np.array([0.3, 0.1]), np.array([0.3, 0.1]))
    amp = make_leading_amplitude(phase, LowerOrderSymbols())
    val = kernel_eval(req, phase, [amp])
    xs, ws = gauss_legendre(400, -2.2, 2.2)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    W = np.outer(ws, ws)
    oracle = np.sum(W * lib.phi((X**2 + Y**2).ravel()).reshape(X.shape)) / (2 * math.pi * h) ** 2
    assert val.real == pytest.approx(oracle, rel=1e-8)
    assert abs(val.imag) < 1e-10 * abs(val.real)


def test_kernel_d1_matches_10x_oracle():
    chart = flat_chart(1)
    lib = make_cutoffs(M0)
    h = 0.125
    phase = build_phase_field(chart, M0, lib, h, t_max=1.0)
    amp = make_leading_amplitude(phase, LowerOrderSymbols())
    req = KernelRequest(chart, M0, lib, h, 0.2, np.array([0.35]), np.array([0.1]))
    val = kernel_eval(req, phase, [amp])
    oracle = kernel_eval(req, phase, [amp], node_factor=10.0)
    assert abs(val - oracle) <= 1e-6 * abs(oracle)


def test_kernel_translation_invariance_flat():
    chart = flat_chart(2)
    lib = make_cutoffs(M1)
    h = 0.25
    phase = build_phase_field(chart, M1, lib, h, t_max=1.0)
    amp = make_leading_amplitude(phase, LowerOrderSymbols())
    x, y = np.array([0.3, 0.0]), np.array([0.05, -0.1])
    v = np.array([0.4, 0.7])
    r1 = kernel_eval(KernelRequest(chart, M1, lib, h, 0.15, x, y), phase, [amp])
    r2 = kernel_eval(KernelRequest(chart, M1, lib, h, 0.15, x + v, y + v), phase, [amp])
    assert abs(abs(r1) - abs(r2)) < 1e-10 * abs(r1)


def test_kernel_quadrature_doubling_converged():
    chart = flat_chart(2)
    lib = make_cutoffs(M1)
    h = 0.25
    phase = build_phase_field(chart, M1, lib, h, t_max=1.0)
    amp = make_leading_amplitude(phase, LowerOrderSymbols())
    req = KernelRequest(chart, M1, lib, h, 0.3, np.array([0.25, 0.0]), np.array([-0.05, 0.0]))
    v1 = kernel_eval(req, phase, [amp])
    v2 = kernel_eval(req, phase, [amp], node_factor=2.0)
    assert abs(v1 - v2) <= 1e-6 * abs(v2)


def test_kernel_interp_path_matches_direct_flow():
    # the coarse-grid + spline evaluation agrees with analytic flat values
    chart = perturbed_flat_chart(2, epsilon=0.0)  # zero perturbation: flat dynamics
    lib = make_cutoffs(M1)
    h = 0.25
    phase_c = build_phase_field(chart, M1, lib, h, t_max=0.5, analytic=False)
    phase_f = build_phase_field(flat_chart(2), M1, lib, h, t_max=0.5)
    amp_c = make_leading_amplitude(phase_c, LowerOrderSymbols())
    amp_f = make_leading_amplitude(phase_f, LowerOrderSymbols())
    x, y = np.array([0.3, 0.1]), np.array([0.0, 0.0])
    vc = kernel_eval(KernelRequest(chart, M1, lib, h, 0.2, x, y), phase_c, [amp_c])
    vf = kernel_eval(KernelRequest(flat_chart(2), M1, lib, h, 0.2, x, y), phase_f, [amp_f])
    assert vc == pytest.approx(vf, rel=5e-6)


def test_resolution_budget_refusal():
    chart = flat_chart(2)
    lib = make_cutoffs(M1)
    h = 2.0**-9
    phase = build_phase_field(chart, M1, lib, h, t_max=1.0)
    amp = make_leading_amplitude(phase, LowerOrderSymbols())
    req = KernelRequest(chart, M1, lib, h, 0.4, np.array([0.5, 0.0]), np.zeros(2))
    with pytest.raises(ResolutionError) as exc:
        kernel_eval(req, phase, [amp], budget=10**4)
    assert exc.value.required > 10**4


def test_hessian_spectrum_examples():
    eig, M = hessian_spectrum(M1, 0.1, np.array([1.0, 0.0]))
    assert eig[0] == pytest.approx(0.01 / 1.01**1.5, abs=1e-12)
    assert eig[1] == pytest.approx(1.0 / math.sqrt(1.01), abs=1e-12)
    assert abs(eig.sum() - np.trace(M)) < 1e-12
    # small eigenvalue scales like h^2
    for d in (2, 3):
        eta = np.zeros(d)
        eta[0] = 1.3
        smalls = [hessian_spectrum(M1, h, eta)[0][0] for h in (0.1, 0.05, 0.025)]
        ratios = [smalls[i] / smalls[i + 1] for i in range(2)]
        assert all(abs(r - 4.0) < 0.1 for r in ratios)
    # d-1 large eigenvalues equal and direction independent
    e1, _ = hessian_spectrum(M1, 0.1, np.array([1.0, 0.0, 0.0]))
    e2, _ = hessian_spectrum(M1, 0.1, np.array([0.0, 0.6, 0.8]))
    assert_allclose(e1[1:], e1[-1])
    assert_allclose(e1, e2, atol=1e-12)
    with pytest.raises(ValueError):
        hessian_spectrum(M1, 0.1, np.zeros(2))


def test_reduced_phase_second_derivative_values():
    # zeta = 0 collapses to the pure Hessian eigenvalue
    F0 = reduced_phase_second_derivative(M1, 0.1, np.zeros(1), 1.0)
    assert F0 == pytest.approx(0.01 / 1.01**1.5, abs=1e-12)
    # frozen oracle value at |zeta| = |eta_j| = 1/sqrt(2), h m = 0.1:
    # exact rational evaluation of the closed form gives 0.0195103...
    v = reduced_phase_second_derivative(M1, 0.1, np.array([2**-0.5]), 2**-0.5)
    assert v == pytest.approx(0.019510331413723668, abs=1e-12)


def test_reduced_phase_fd_oracle():
    # closed form against a centered second difference of F built by
    # numerically eliminating the transverse block via root-finding
    for w in (np.array([0.2, 0.5]), np.array([-0.45, 0.3]), np.array([0.0, 0.7])):
        F, zeta_of = reduced_phase_1d(M1, 0.25, w)
        for ej in (0.8, 1.2):
            de = 1e-4
            fd = (F(ej + de) - 2 * F(ej) + F(ej - de)) / de**2
            cf = reduced_phase_second_derivative(M1, 0.25, zeta_of(ej), ej)
            assert abs(cf - fd) <= 1e-6 * abs(cf)


def test_reduced_phase_lower_bound_ratio_stable():
    # F'' / (h^2 m^2) bounded above and below uniformly over the annulus and h
    lib = make_cutoffs(M1, branch="kg")
    a, b = lib.support
    ratios = []
    for h in [2.0**-k for k in range(2, 9)]:
        for lam in np.linspace(a, b, 7):
            for frac in (0.1, 0.5, 0.9):
                ej = math.sqrt(lam * frac)
                z = math.sqrt(lam * (1 - frac))
                ratios.append(
                    reduced_phase_second_derivative(M1, h, np.array([z]), ej) / (h**2)
                )
    assert max(ratios) / min(ratios) < 60.0
    assert min(ratios) > 0


def _gauss_amp(x):
    x = np.asarray(x, dtype=float)
    out = unit_bump(x / 0.9)
    return out if x.ndim else float(out)


def test_stationary_phase_leading_term_and_error_order():
    phase = lambda x: (0.5 * x**2, x, 1.0)
    errs = []
    lams = [50.0, 100.0, 200.0, 400.0]
    for lam in lams:
        res = stationary_phase_reference(phase, _gauss_amp, lam, ([-0.9], [0.9]))
        assert res.stationary
        expect = math.sqrt(2 * math.pi / lam) * np.exp(1j * math.pi / 4) * _gauss_amp(0.0)
        assert res.leading == pytest.approx(expect, rel=1e-12)
        errs.append(abs(res.quadrature - res.leading))
    slope = np.polyfit(np.log(lams), np.log(errs), 1)[0]
    assert -1.8 <= slope <= -1.2
    # C fitted at the smallest lambda covers the sweep
    C = errs[0] * lams[0] ** 1.5
    for lam, e in zip(lams, errs):
        assert e <= 1.2 * C * lam**-1.5


def test_stationary_phase_signature_flip():
    phase = lambda x: (-0.5 * x**2, -x, -1.0)
    res = stationary_phase_reference(phase, _gauss_amp, 200.0, ([-0.9], [0.9]))
    expect = math.sqrt(2 * math.pi / 200.0) * np.exp(-1j * math.pi / 4) * _gauss_amp(0.0)
    assert res.leading == pytest.approx(expect, rel=1e-12)


def test_nonstationary_amplitude_decays_fast():
    phase = lambda x: (0.5 * x**2, x, 1.0)
    amp = lambda x: unit_bump((np.asarray(x) - 0.55) / 0.25)
    lams = [50.0, 100.0, 200.0, 400.0]
    vals = [abs(sp_quadrature(phase, amp, lam, ([0.3], [0.8]))) for lam in lams]
    slope = np.polyfit(np.log(lams), np.log(vals), 1)[0]
    assert slope < -3.0


def test_stationary_phase_reports_nonstationary_regime():
    phase = lambda x: (2.0 * x, 2.0, 0.0)
    res = stationary_phase_reference(phase, _gauss_amp, 100.0, ([-0.9], [0.9]))
    assert not res.stationary
    assert res.leading is None


def test_van_der_corput_quadratic():
    pd = lambda x, k: {0: np.asarray(x) ** 2, 1: 2 * np.asarray(x), 2: np.full_like(np.asarray(x, dtype=float), 2.0)}[k]
    rep = van_der_corput_check(pd, 2, 2.0, _gauss_amp, [1e2, 1e3, 1e4, 1e5], (-0.9, 0.9))
    assert rep.premise_ok and rep.ok
    assert rep.C_max <= 3.0


def test_van_der_corput_linear_monotone():
    pd = lambda x, k: {0: np.asarray(x, dtype=float), 1: np.ones_like(np.asarray(x, dtype=float)), 2: np.zeros_like(np.asarray(x, dtype=float))}[k]
    rep = van_der_corput_check(pd, 1, 1.0, _gauss_amp, [1e2, 1e3, 1e4], (-0.9, 0.9))
    assert rep.premise_ok and rep.ok


def test_van_der_corput_premise_violation_reported():
    pd = lambda x, k: {0: np.asarray(x) ** 3 / 3.0, 1: np.asarray(x) ** 2, 2: 2.0 * np.asarray(x)}[k]
    rep = van_der_corput_check(pd, 2, 0.5, _gauss_amp, [1e2, 1e3], (-0.9, 0.9))
    assert not rep.premise_ok
    assert rep.violation_at is not None and abs(rep.violation_at) < 0.3


def test_van_der_corput_kg_reduced_phase():
    # the KG reduced phase with c2 = measured min F'' on the annulus
    h = 0.25
    w = np.array([0.3, 0.55])
    F, zof = reduced_phase_1d(M1, h, w)
    a_int, b_int = 0.9, 1.6

    def pd(x, k):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if k == 0:
            return np.array([F(v) for v in x])
        if k == 1:
            return np.array([(F(v + 5e-6) - F(v - 5e-6)) / 1e-5 for v in x])
        return np.array([reduced_phase_second_derivative(M1, h, zof(v), v) for v in x])

    xs = np.linspace(a_int, b_int, 201)
    c2 = min(reduced_phase_second_derivative(M1, h, zof(v), v) for v in xs)
    amp = lambda x: unit_bump((np.asarray(x) - 1.25) / 0.33)
    rep = van_der_corput_check(pd, 2, c2, amp, [50.0, 100.0, 200.0, 400.0], (a_int, b_int), n_dense=201)
    assert rep.premise_ok and rep.ok


def test_decay_windows_shape_and_emptiness():
    ts = decay_windows("wave", 2.0**-6, 1.0, 5)
    assert len(ts) == 5 and ts[0] == pytest.approx(12 * 2.0**-6) and ts[-1] == pytest.approx(1.0)
    ts = decay_windows("kg", 2.0**-9, 1.0, 5)
    assert ts[-1] == pytest.approx(math.sqrt(2.0**-9))
    with pytest.raises(ValueError):
        decay_windows("kg", 0.25, 1.0, 5)


def test_nodes_criterion_floor():
    assert kernel_nodes_required(0.5, 4.0, 0.1) == 32
    assert kernel_nodes_required(2.0**-7, 4.0, 1.0) >= 10 * 4.0 / (2 * math.pi * 2.0**-7)
