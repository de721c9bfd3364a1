"""WKB amplitudes along the transport flow.

The leading amplitude is carried along the bicharacteristic projection,

    a_0(t,x,xi) = a(Z(0,t,x,xi), xi) exp( int_0^t f(s, Z(s,t,x,xi), xi) ds ),

with f = (1/2) tr[grad_eta^2 psi(p)(x, grad_x S) . grad_x^2 S] + i q_1, and
the first corrector is the Duhamel integral of the order-two composition
bracket of psi(p) against a_0.  Because the transport characteristics are the
position projections of the bicharacteristics, every quantity is evaluated by
forward flows from the Newton-inverted source point; x-derivatives of a_0 and
third phase derivatives use centered differences of the flow map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .geometry import CutoffLibrary, MassParam, MetricChart, principal_symbol
from .hamilton_jacobi import PhaseField, _hess_x_S, _Symbol, integrate_flow, invert_flow

__all__ = [
    "LowerOrderSymbols",
    "Amplitude",
    "initial_symbol",
    "f_coefficient",
    "leading_amplitude",
    "first_corrector",
    "support_check",
    "make_leading_amplitude",
    "make_first_corrector",
    "amplitude_on_grid",
]

FD_STEP_BASE = 1e-4  # spec'd step scale for flow-map differences


@dataclass(frozen=True)
class LowerOrderSymbols:
    """Sub-principal symbols q_j; only q_1 is configurable, higher ones absent.

    q1 maps batched (x, xi) to complex values and must be smooth and compactly
    supported in xi.  The default None means q_1 = 0.
    """

    q1: Optional[Callable] = None


@dataclass(frozen=True)
class Amplitude:
    """A WKB coefficient a_{r,h}: order r in {0, 1} and a (t, x, xi) evaluator."""

    order: int
    eval: Callable
    support_box: tuple
    initial: Optional[Callable] = None


def initial_symbol(chart, library):
    """Default initial datum a(x, xi) = phi(p_{0,0}(x, xi))."""

    def a(x, xi):
        G = chart.metric_inverse(x)
        lam = np.einsum("...jk,...j,...k->...", G, xi, xi)
        return library.phi(lam)

    return a


def _path_f_values(field, X, Xi, J, symbols):
    """Transport coefficient f at stored path nodes, shape (nodes, B)."""
    sym = _Symbol(field.chart, field.mass, field.library, field.h)
    nodes, B, d = X.shape
    Xf = X.reshape(-1, d)
    Xif = Xi.reshape(-1, d)
    qxixi = sym.full(Xf, Xif)[5]
    M2 = _hess_x_S(J.reshape(-1, 2 * d, 2 * d), d)
    f = 0.5 * np.einsum("bij,bji->b", qxixi, M2).astype(complex)
    if symbols.q1 is not None:
        f = f + 1j * symbols.q1(Xf, Xif)
    return f.reshape(nodes, B)


def f_coefficient(field, symbols, t, x, xi):
    """f_h(t,x,xi) = (1/2) tr[grad_eta^2 psi(p)(x, grad_x S) . grad_x^2 S] + i q_1."""
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    xi2 = np.atleast_2d(np.asarray(xi, dtype=float))
    x2, xi2 = np.broadcast_arrays(x2, xi2)
    _, grad, hess, _ = field.eval(t, x2, xi2)
    sym = _Symbol(field.chart, field.mass, field.library, field.h)
    qxixi = sym.full(x2, grad)[5]
    out = 0.5 * np.einsum("bij,bji->b", qxixi, hess).astype(complex)
    if symbols.q1 is not None:
        out = out + 1j * symbols.q1(x2, grad)
    return out[0] if single else out


def _even_steps(t):
    if t == 0:
        return 2
    return max(64, 2 * int(math.ceil(abs(t) / 2e-3)))


def leading_amplitude(field, symbols, a0_init, t, x, xi):
    """a_0(t, x, xi) with the exp-integral done by composite Simpson (>= 33 nodes)."""
    single = np.asarray(x).ndim == 1
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    xi2 = np.atleast_2d(np.asarray(xi, dtype=float))
    x2, xi2 = np.broadcast_arrays(x2, xi2)
    if a0_init is None:
        a0_init = initial_symbol(field.chart, field.library)
    if t == 0:
        out = np.asarray(a0_init(x2, xi2), dtype=complex)
        return out[0] if single else out
    n = _even_steps(t)
    y, _ = invert_flow(field.chart, field.mass, field.library, field.h, t, x2, xi2, step=abs(t) / n)
    path = integrate_flow(
        field.chart, field.mass, field.library, field.h, t, y, xi2,
        step=abs(t) / n, jacobian=True, store_path=True, check_drift=False,
    )
    fvals = _path_f_values(field, path.X, path.Xi, path.J, symbols)
    F = simpson(fvals.real, x=path.s, axis=0) + 1j * simpson(fvals.imag, x=path.s, axis=0)
    out = np.asarray(a0_init(y, xi2), dtype=complex) * np.exp(F)
    return out[0] if single else out


def _eta_tensors(sym, X, Xi, up_to=4):
    """eta-derivative tensors of psi(p) at (x, eta) = (X, Xi), orders 2..4."""
    G = sym.chart.metric_inverse(X)
    p = np.einsum("bjk,bj,bk->b", G, Xi, Xi) + sym.shift
    ders = sym.library.psi(p, order=up_to)
    u = 2.0 * np.einsum("bjk,bk->bj", G, Xi)
    H = 2.0 * G
    d1, d2, d3, d4 = ders[1], ders[2], ders[3], ders[4]
    uu = u[:, :, None] * u[:, None, :]
    T2 = d2[:, None, None] * uu + d1[:, None, None] * H
    uH = (
        u[:, :, None, None] * H[:, None, :, :]
        + u[:, None, :, None] * H[:, :, None, :]
        + u[:, None, None, :] * H[:, :, :, None]
    )
    T3 = d3[:, None, None, None] * u[:, :, None, None] * uu[:, None, :, :] + d2[:, None, None, None] * uH
    uuuu = uu[:, :, :, None, None] * uu[:, None, None, :, :]
    uuH = (
        uu[:, :, :, None, None] * H[:, None, None, :, :]
        + uu[:, :, None, :, None] * H[:, None, :, None, :]
        + uu[:, :, None, None, :] * H[:, None, :, :, None]
        + uu[:, None, :, :, None] * H[:, :, None, None, :]
        + uu[:, None, :, None, :] * H[:, :, None, :, None]
        + uu[:, None, None, :, :] * H[:, :, :, None, None]
    )
    HH = (
        H[:, :, :, None, None] * H[:, None, None, :, :]
        + H[:, :, None, :, None] * H[:, None, :, None, :]
        + H[:, :, None, None, :] * H[:, None, :, :, None]
    )
    T4 = (
        d4[:, None, None, None, None] * uuuu
        + d3[:, None, None, None, None] * uuH
        + d2[:, None, None, None, None] * HH
    )
    return T2, T3, T4


def _bracket2(sym, X, Xi, A, d3S, c, dc, d2c):
    """(psi(p) <| c)_2: order-two term of Op(psi(p)) acting on the FIO with phase S.

    A = grad_x^2 S; d3S the symmetrized third x-derivatives; c, dc, d2c the
    symbol and its x-derivatives, all at the same base points.
    """
    T2, T3, T4 = _eta_tensors(sym, X, Xi)
    term1 = -0.5 * np.einsum("bkl,bkl->b", T2, d2c)
    term2 = -(1.0 / 6.0) * np.einsum("bklm,bklm->b", T3, d3S) * c
    term3 = -0.5 * np.einsum("bklm,bkl,bm->b", T3, A, dc)
    term4 = -0.125 * np.einsum("bklmn,bkl,bmn->b", T4, A, A) * c
    return term1 + term2 + term3 + term4


def _q1_bracket1(symbols, X, Xi, A, c, dc, delta):
    """(q_1 <| c)_1 with eta-derivatives of q_1 by central differences."""
    q1 = symbols.q1
    B, d = X.shape
    grad_q1 = np.empty((B, d), dtype=complex)
    hess_q1 = np.empty((B, d, d), dtype=complex)
    base = q1(X, Xi)
    for j in range(d):
        ej = np.zeros(d)
        ej[j] = delta
        fp = q1(X, Xi + ej)
        fm = q1(X, Xi - ej)
        grad_q1[:, j] = (fp - fm) / (2 * delta)
        hess_q1[:, j, j] = (fp - 2 * base + fm) / delta**2
        for l in range(j + 1, d):
            el = np.zeros(d)
            el[l] = delta
            fpp = q1(X, Xi + ej + el)
            fpm = q1(X, Xi + ej - el)
            fmp = q1(X, Xi - ej + el)
            fmm = q1(X, Xi - ej - el)
            hess_q1[:, j, l] = hess_q1[:, l, j] = (fpp - fpm - fmp + fmm) / (4 * delta**2)
    val = np.einsum("bj,bj->b", grad_q1, dc) + 0.5 * np.einsum("bij,bji->b", hess_q1, A) * c
    return -1j * val


def _stencil_offsets(d, delta):
    offs = []
    for j in range(d):
        for sgn in (+1.0, -1.0):
            e = np.zeros(d)
            e[j] = sgn * delta
            offs.append(e)
    for j in range(d):
        for l in range(j + 1, d):
            for sj in (+1.0, -1.0):
                for sl in (+1.0, -1.0):
                    e = np.zeros(d)
                    e[j] = sj * delta
                    e[l] = sl * delta
                    offs.append(e)
    return np.array(offs)


def first_corrector(field, symbols, a0, t, x, xi):
    """a_1(t, x, xi): Duhamel integral of the source along the transport flow.

    With q_{j>=2} = 0 the source reduces to i (psi(p) <| a_0)_2 plus the q_1
    bracket.  x-derivatives of a_0 and third phase derivatives come from a
    centered stencil of inverse flow problems solved in one batch.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if x.ndim != 1:
        raise ValueError("first_corrector evaluates one (t, x, xi) point at a time")
    if t == 0:
        return 0.0 + 0.0j
    a_init = a0.initial if a0.initial is not None else initial_symbol(field.chart, field.library)
    chart, mass, lib, h = field.chart, field.mass, field.library, field.h
    d = chart.dim
    n = _even_steps(t)
    step = abs(t) / n
    y, _ = invert_flow(chart, mass, lib, h, t, x[None], xi[None], step=step)
    path = integrate_flow(
        chart, mass, lib, h, t, y, xi[None],
        step=step, jacobian=True, f_symbols=symbols, store_path=True, check_drift=False,
    )
    nodes = path.X.shape[0]
    Xc = path.X[:, 0, :]
    Xic = path.Xi[:, 0, :]
    Fc = path.f[:, 0]
    hess_c = _hess_x_S(path.J[:, 0], d)
    a0_c = np.asarray(a_init(y, xi[None]), dtype=complex)[0] * np.exp(Fc)

    delta = FD_STEP_BASE * (1.0 + np.max(np.abs(x)))
    offsets = _stencil_offsets(d, delta)
    n_off = len(offsets)
    targets = (Xc[:, None, :] + offsets[None, :, :]).reshape(-1, d)
    node_idx = np.repeat(np.arange(nodes), n_off)

    # batched Newton against stored intermediate times of one forward flow
    Jxy0 = path.J[:, 0, :d, :d]
    y_guess = y[0][None, :] + np.einsum(
        "kij,kj->ki", np.linalg.inv(Jxy0)[node_idx], (targets - Xc[node_idx])
    )
    yk = y_guess
    xib = np.broadcast_to(xi, yk.shape)
    stencil_path = None
    for _ in range(12):
        stencil_path = integrate_flow(
            chart, mass, lib, h, t, yk, xib,
            step=step, jacobian=True, f_symbols=symbols, store_path=True, check_drift=False,
        )
        res = stencil_path.X[node_idx, np.arange(len(yk))] - targets
        err = np.max(np.abs(res))
        if err <= 1e-11 * (1.0 + np.max(np.abs(x))):
            break
        Jxy = stencil_path.J[node_idx, np.arange(len(yk)), :d, :d]
        yk = yk - np.linalg.solve(Jxy, res[..., None])[..., 0]
    rows = np.arange(len(yk))
    a0_st = (
        np.asarray(a_init(yk, xib), dtype=complex)
        * np.exp(stencil_path.f[node_idx, rows])
    ).reshape(nodes, n_off)
    hess_st = _hess_x_S(stencil_path.J[node_idx, rows], d).reshape(nodes, n_off, d, d)

    dc = np.empty((nodes, d), dtype=complex)
    d2c = np.empty((nodes, d, d), dtype=complex)
    d3S = np.zeros((nodes, d, d, d))
    for j in range(d):
        ip, im = 2 * j, 2 * j + 1
        dc[:, j] = (a0_st[:, ip] - a0_st[:, im]) / (2 * delta)
        d2c[:, j, j] = (a0_st[:, ip] - 2 * a0_c + a0_st[:, im]) / delta**2
        d3S[:, j, :, :] = (hess_st[:, ip] - hess_st[:, im]) / (2 * delta)
    base = 2 * d
    idx = 0
    for j in range(d):
        for l in range(j + 1, d):
            pp, pm, mp, mm = base + idx, base + idx + 1, base + idx + 2, base + idx + 3
            val = (a0_st[:, pp] - a0_st[:, pm] - a0_st[:, mp] + a0_st[:, mm]) / (4 * delta**2)
            d2c[:, j, l] = d2c[:, l, j] = val
            idx += 4
    # symmetrize the third derivative over all index permutations
    d3S = (
        d3S
        + np.einsum("bjkl->bklj", d3S)
        + np.einsum("bjkl->bljk", d3S)
        + np.einsum("bjkl->bjlk", d3S)
        + np.einsum("bjkl->bkjl", d3S)
        + np.einsum("bjkl->blkj", d3S)
    ) / 6.0

    sym = _Symbol(chart, mass, lib, h)
    br2 = _bracket2(sym, Xc, Xic, hess_c, d3S, a0_c, dc, d2c)
    g1 = 1j * br2
    if symbols.q1 is not None:
        g1 = g1 + 1j * _q1_bracket1(symbols, Xc, Xic, hess_c, a0_c, dc, delta)

    Fcum = cumulative_simpson(Fc.real, x=path.s, initial=0.0) + 1j * cumulative_simpson(
        Fc.imag, x=path.s, initial=0.0
    )
    weight = np.exp(Fcum[-1] - Fcum)
    integrand = g1 * weight
    return complex(simpson(integrand.real, x=path.s) + 1j * simpson(integrand.imag, x=path.s))


def support_check(amplitude, t_grid, x_points, xi_points, chart, library, *, enlargement=1.5, tol=1e-10):
    """True iff |amplitude| <= tol outside p_{0,0}^{-1}(K) on the sample grid.

    K enlarges supp phi = [a, b] to [a/enlargement, b*enlargement].  Returns
    (ok, worst) with worst = (value, t, x, xi) the largest offender found.
    """
    a, b = library.support
    K_lo, K_hi = a / enlargement, b * enlargement
    x_points = np.asarray(x_points, dtype=float)
    xi_points = np.asarray(xi_points, dtype=float)
    worst = (0.0, None, None, None)
    ok = True
    for t in np.atleast_1d(t_grid):
        for x in x_points:
            G = chart.metric_inverse(x)
            lam = np.einsum("jk,bj,bk->b", G, xi_points, xi_points)
            outside = (lam < K_lo) | (lam > K_hi)
            if not np.any(outside):
                continue
            vals = np.abs(amplitude.eval(t, np.broadcast_to(x, xi_points[outside].shape), xi_points[outside]))
            i = int(np.argmax(vals))
            if vals[i] > worst[0]:
                worst = (float(vals[i]), float(t), x.copy(), xi_points[outside][i].copy())
            if vals[i] > tol:
                ok = False
    return ok, worst


def make_leading_amplitude(field, symbols, a0_init=None):
    if a0_init is None:
        a0_init = initial_symbol(field.chart, field.library)

    def ev(t, x, xi):
        return leading_amplitude(field, symbols, a0_init, t, x, xi)

    return Amplitude(order=0, eval=ev, support_box=field.library.support, initial=a0_init)


def make_first_corrector(field, symbols, a0_init=None):
    a0 = make_leading_amplitude(field, symbols, a0_init)

    def ev(t, x, xi):
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        xi2 = np.atleast_2d(np.asarray(xi, dtype=float))
        x2, xi2 = np.broadcast_arrays(x2, xi2)
        vals = np.array([first_corrector(field, symbols, a0, t, xx, xx_xi) for xx, xx_xi in zip(x2, xi2)])
        return vals[0] if np.asarray(x).ndim == 1 else vals

    return Amplitude(order=1, eval=ev, support_box=field.library.support, initial=a0.initial)


def amplitude_on_grid(field, symbols, a0_init, t, x_points, xi_points):
    """Batched a_0 over paired (x, xi) arrays; returns (values, source_points).

    Used by the kernel sweeps: one Newton inversion batch plus one forward
    flow with the transport integral accumulated as an extra ODE component.
    """
    if a0_init is None:
        a0_init = initial_symbol(field.chart, field.library)
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    xi_points = np.atleast_2d(np.asarray(xi_points, dtype=float))
    x_points, xi_points = np.broadcast_arrays(x_points, xi_points)
    if t == 0:
        return np.asarray(a0_init(x_points, xi_points), dtype=complex), x_points.copy()
    y, _ = invert_flow(field.chart, field.mass, field.library, field.h, t, x_points, xi_points)
    path = integrate_flow(
        field.chart, field.mass, field.library, field.h, t, y, xi_points,
        jacobian=True, f_symbols=symbols, check_drift=False,
    )
    vals = np.asarray(a0_init(y, xi_points), dtype=complex) * np.exp(path.f[-1])
    return vals, y
