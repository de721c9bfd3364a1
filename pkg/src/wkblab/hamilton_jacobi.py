"""Phase construction by the method of characteristics.

The Hamilton-Jacobi equation

    d/dt S(t,x,xi) - psi(p_{m,h})(x, grad_x S) = 0,   S(0) = x . xi

is solved along bicharacteristics of q = psi(p): Xdot = -grad_xi q,
Xidot = +grad_x q, with the accumulated action y.xi + int (Xi.Xdot + q) ds.
The sign convention is fixed so that the flat closed form
S = x.xi + t sqrt(h^2 m^2 + |xi|^2) is reproduced exactly.

All flows run batched over numpy arrays; first derivatives of the flow map
come from the variational equations integrated alongside, second phase
derivatives from the Jacobian blocks, and the transport coefficient f can be
accumulated along the same trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import CutoffLibrary, MassParam, MetricChart
from .util import loglog_fit

__all__ = [
    "FlowState",
    "FlowPath",
    "PhaseField",
    "CausticError",
    "StepRejected",
    "hamiltonian_flow",
    "integrate_flow",
    "invert_flow",
    "build_phase_field",
    "phase_eval",
    "transport_flow",
    "remainder_bound_check",
    "remainder_sweep",
    "certify_t0",
]

HAMILTONIAN_DRIFT_TOL = 1e-8
NEWTON_MAX_ITER = 25


class CausticError(RuntimeError):
    """Characteristic-map inversion failed (t too large: caustic proximity)."""


class StepRejected(RuntimeError):
    """Hamiltonian drift exceeded tolerance; caller should halve the step."""


@dataclass(frozen=True)
class FlowState:
    """Bicharacteristic state at time t."""

    X: np.ndarray
    Xi: np.ndarray
    action: np.ndarray


@dataclass
class FlowPath:
    """Dense output of a batched flow integration.

    Arrays are indexed [node, batch, ...] over the uniform step grid; `J` is
    the Jacobian of (X, Xi) with respect to (y, xi), and `f` the transport
    coefficient along the trajectory when requested.
    """

    s: np.ndarray
    X: np.ndarray
    Xi: np.ndarray
    action: np.ndarray
    J: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None


def _default_steps(t):
    if t == 0:
        return 1
    return max(64, int(math.ceil(abs(t) / 1e-3)))


class _Symbol:
    """q = psi(p_{m,h}) and its derivatives on batched (x, xi)."""

    def __init__(self, chart: MetricChart, mass: MassParam, library: CutoffLibrary, h: float):
        self.chart = chart
        self.mass = mass
        self.library = library
        self.h = float(h)
        self.shift = self.h**2 * mass.m_tilde**2

    def p(self, X, Xi):
        G = self.chart.metric_inverse(X)
        return np.einsum("...jk,...j,...k->...", G, Xi, Xi) + self.shift, G

    def first(self, X, Xi):
        """Returns q, q_x, q_xi."""
        p, G = self.p(X, Xi)
        psi, dpsi = self.library.psi(p, order=1)
        dG = self.chart.dG(X)
        px = np.einsum("...jkl,...k,...l->...j", dG, Xi, Xi)
        pxi = 2.0 * np.einsum("...jk,...k->...j", G, Xi)
        return q_pack(psi, dpsi[..., None] * px, dpsi[..., None] * pxi)

    def full(self, X, Xi):
        """Returns q, q_x, q_xi, q_xx, q_xxi, q_xixi.

        q_xxi[i, j] = d^2 q / dx_i dxi_j.
        """
        p, G = self.p(X, Xi)
        psi, d1, d2 = self.library.psi(p, order=2)
        dG = self.chart.dG(X)
        d2G = self.chart.d2G(X)
        px = np.einsum("...jkl,...k,...l->...j", dG, Xi, Xi)
        pxi = 2.0 * np.einsum("...jk,...k->...j", G, Xi)
        pxx = np.einsum("...ijkl,...k,...l->...ij", d2G, Xi, Xi)
        pxxi = 2.0 * np.einsum("...ikl,...l->...ik", dG, Xi)
        q = psi
        qx = d1[..., None] * px
        qxi = d1[..., None] * pxi
        qxx = d2[..., None, None] * px[..., :, None] * px[..., None, :] + d1[..., None, None] * pxx
        qxxi = d2[..., None, None] * px[..., :, None] * pxi[..., None, :] + d1[..., None, None] * pxxi
        qxixi = (
            d2[..., None, None] * pxi[..., :, None] * pxi[..., None, :]
            + 2.0 * d1[..., None, None] * G
        )
        return q, qx, qxi, qxx, qxxi, qxixi


def q_pack(q, qx, qxi):
    return q, qx, qxi


def _hess_x_S(J, d):
    """grad_x^2 S = (dXi/dy) (dX/dy)^{-1} from the flow Jacobian."""
    Jxy = J[..., :d, :d]
    Jxiy = J[..., d:, :d]
    M = Jxiy @ np.linalg.inv(Jxy)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def integrate_flow(
    chart,
    mass,
    library,
    h,
    t,
    y,
    xi,
    *,
    step=None,
    jacobian=False,
    f_symbols=None,
    store_path=False,
    check_drift=True,
):
    """Integrate the bicharacteristic system from (y, xi) up to time t.

    f_symbols: optional LowerOrderSymbols-like object with a q1 attribute;
    when given, the transport coefficient f is accumulated (requires the
    Jacobian) and the complex integral int_0^t f ds is returned on the path.

    Returns a FlowPath; when store_path is false only the endpoint node is
    retained (the path arrays have length 1).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    y, xi = np.broadcast_arrays(y, xi)
    B, d = y.shape
    sym = _Symbol(chart, mass, library, h)
    want_f = f_symbols is not None
    want_J = jacobian or want_f

    n = _default_steps(t) if step is None else max(1, int(math.ceil(abs(t) / step)))
    dt = t / n if t != 0 else 0.0

    X = y.copy()
    Xi = xi.copy()
    action = np.einsum("bi,bi->b", y, xi)
    J = np.broadcast_to(np.eye(2 * d), (B, 2 * d, 2 * d)).copy() if want_J else None
    F = np.zeros(B, dtype=complex) if want_f else None

    q1 = getattr(f_symbols, "q1", None) if want_f else None

    def rhs(X, Xi, J):
        if want_J:
            q, qx, qxi, qxx, qxxi, qxixi = sym.full(X, Xi)
            top = np.concatenate([-np.swapaxes(qxxi, -1, -2), -qxixi], axis=-1)
            bot = np.concatenate([qxx, qxxi], axis=-1)
            A = np.concatenate([top, bot], axis=-2)
            dJ = A @ J
        else:
            q, qx, qxi = sym.first(X, Xi)
            dJ = None
        dX = -qxi
        dXi = qx
        dact = np.einsum("bi,bi->b", Xi, dX) + q
        if want_f:
            M2 = _hess_x_S(J, d)
            fval = 0.5 * np.einsum("bij,bji->b", qxixi, M2).astype(complex)
            if q1 is not None:
                fval = fval + 1j * q1(X, Xi)
            dF = fval
        else:
            dF = None
        return dX, dXi, dact, dJ, dF

    if store_path:
        nodes = n + 1
        path_X = np.empty((nodes, B, d))
        path_Xi = np.empty((nodes, B, d))
        path_act = np.empty((nodes, B))
        path_J = np.empty((nodes, B, 2 * d, 2 * d)) if want_J else None
        path_F = np.empty((nodes, B), dtype=complex) if want_f else None

        def record(i):
            path_X[i] = X
            path_Xi[i] = Xi
            path_act[i] = action
            if want_J:
                path_J[i] = J
            if want_f:
                path_F[i] = F

        record(0)

    q_start = sym.first(X, Xi)[0] if check_drift else None

    for i in range(n):
        k1 = rhs(X, Xi, J)
        k2 = rhs(X + 0.5 * dt * k1[0], Xi + 0.5 * dt * k1[1], None if not want_J else J + 0.5 * dt * k1[3])
        k3 = rhs(X + 0.5 * dt * k2[0], Xi + 0.5 * dt * k2[1], None if not want_J else J + 0.5 * dt * k2[3])
        k4 = rhs(X + dt * k3[0], Xi + dt * k3[1], None if not want_J else J + dt * k3[3])
        X = X + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        Xi = Xi + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        action = action + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if want_J:
            J = J + (dt / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        if want_f:
            F = F + (dt / 6.0) * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4])
        if store_path:
            record(i + 1)

    if check_drift and n > 0 and t != 0:
        drift = np.max(np.abs(sym.first(X, Xi)[0] - q_start))
        if drift > HAMILTONIAN_DRIFT_TOL:
            raise StepRejected(f"Hamiltonian drift {drift:.3e} exceeds {HAMILTONIAN_DRIFT_TOL}")

    s_grid = np.linspace(0.0, t, (n + 1) if store_path else 1)
    if store_path:
        return FlowPath(s=s_grid, X=path_X, Xi=path_Xi, action=path_act, J=path_J, f=path_F)
    return FlowPath(
        s=np.array([t]),
        X=X[None],
        Xi=Xi[None],
        action=action[None],
        J=None if J is None else J[None],
        f=None if F is None else F[None],
    )


def hamiltonian_flow(chart, mass, library, h, t, y, xi, step=None):
    """Bicharacteristic endpoint (X(t), Xi(t), action(t)) from (y, xi).

    On Hamiltonian drift beyond 1e-8 the step is halved automatically, up to
    four times, before giving up.
    """
    step = step if step is not None else min(1e-3, abs(t) / 64 if t else 1e-3)
    for _ in range(5):
        try:
            path = integrate_flow(chart, mass, library, h, t, y, xi, step=step)
            break
        except StepRejected:
            step *= 0.5
    else:
        raise StepRejected("Hamiltonian drift persists after halving the step four times")
    squeeze = np.asarray(y).ndim == 1
    X, Xi, act = path.X[-1], path.Xi[-1], path.action[-1]
    if squeeze:
        return FlowState(X=X[0], Xi=Xi[0], action=act[0])
    return FlowState(X=X, Xi=Xi, action=act)


def invert_flow(chart, mass, library, h, t, x, xi, *, step=None, jacobian=True):
    """Find y with X(t; y, xi) = x by damped Newton; returns (y, endpoint path).

    The starting guess is the straight-line predictor y = x + t grad_xi q(x, xi).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    x, xi = np.broadcast_arrays(x, xi)
    sym = _Symbol(chart, mass, library, h)
    _, _, qxi = sym.first(x, xi)
    y = x + t * qxi
    scale = 1.0 + np.max(np.abs(x))
    tol = 1e-11 * scale
    path = None
    for _ in range(NEWTON_MAX_ITER):
        path = integrate_flow(
            chart, mass, library, h, t, y, xi, step=step, jacobian=True, check_drift=False
        )
        res = path.X[-1] - x
        err = np.max(np.abs(res))
        if err <= tol:
            if not jacobian:
                path = integrate_flow(chart, mass, library, h, t, y, xi, step=step, check_drift=False)
            return y, path
        d = x.shape[-1]
        Jxy = path.J[-1][:, :d, :d]
        delta = np.linalg.solve(Jxy, res[..., None])[..., 0]
        # damp long steps; the map is a contraction perturbation of identity
        norm = np.max(np.abs(delta))
        if norm > 0.5 * scale:
            delta *= 0.5 * scale / norm
        y = y - delta
    raise CausticError(
        f"characteristic inversion did not converge in {NEWTON_MAX_ITER} iterations "
        f"(|X(t;y)-x| = {err:.3e}); t may exceed the certified window"
    )


@dataclass
class PhaseField:
    """The phase S_h(t, x, xi) with gradients, backed by characteristic flows.

    For flat charts an exact closed-form evaluation is available and used when
    `analytic` is true: S = x.xi + t psi(p)(xi), which solves the equation
    globally because p has no x dependence.
    """

    chart: MetricChart
    mass: MassParam
    library: CutoffLibrary
    h: float
    t_max: float
    analytic: bool = False

    def eval(self, t, x, xi, *, step=None):
        """Returns (S, grad_x S, hess_x S, grad_x grad_xi S) at (t, x, xi)."""
        single = np.asarray(x).ndim == 1
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        x, xi = np.broadcast_arrays(x, xi)
        if abs(t) > self.t_max * (1 + 1e-12):
            raise CausticError(f"|t|={abs(t):.4g} exceeds certified t0={self.t_max:.4g}")
        B, d = x.shape
        if self.analytic:
            if self.chart.kind != "flat":
                raise ValueError("analytic phase evaluation requires a flat chart")
            p = np.einsum("bi,bi->b", xi, xi) + self.h**2 * self.mass.m_tilde**2
            psi = self.library.psi(p)
            S = np.einsum("bi,bi->b", x, xi) + t * psi
            grad = xi.copy()
            hess = np.zeros((B, d, d))
            mixed = np.broadcast_to(np.eye(d), (B, d, d)).copy()
        else:
            y, path = invert_flow(self.chart, self.mass, self.library, self.h, t, x, xi, step=step)
            S = path.action[-1]
            grad = path.Xi[-1]
            J = path.J[-1]
            hess = _hess_x_S(J, d)
            mixed = np.swapaxes(np.linalg.inv(J[:, :d, :d]), -1, -2)
        if single:
            return S[0], grad[0], hess[0], mixed[0]
        return S, grad, hess, mixed

    def source_point(self, t, x, xi):
        """y with X(t; y, xi) = x (equals grad_xi S and Z_h(0, t, x, xi))."""
        single = np.asarray(x).ndim == 1
        if self.analytic:
            x2 = np.atleast_2d(np.asarray(x, dtype=float))
            xi2 = np.atleast_2d(np.asarray(xi, dtype=float))
            x2, xi2 = np.broadcast_arrays(x2, xi2)
            p = np.einsum("bi,bi->b", xi2, xi2) + self.h**2 * self.mass.m_tilde**2
            _, dpsi = self.library.psi(p, order=1)
            y = x2 + t * 2.0 * dpsi[:, None] * xi2
            return y[0] if single else y
        y, _ = invert_flow(self.chart, self.mass, self.library, self.h, t, x, xi, jacobian=False)
        return y[0] if single else y


def build_phase_field(chart, mass, library, h, *, t_max=None, analytic=None, certify_grid=None):
    """Construct a PhaseField; t_max is certified at runtime unless given."""
    if analytic is None:
        analytic = chart.kind == "flat"
    if t_max is None:
        if chart.kind == "flat":
            t_max = 1.0
        else:
            x_pts, xi_pts = certify_grid if certify_grid is not None else _default_certify_grid(chart, library)
            t_max = certify_t0(chart, mass, library, [h], x_pts, xi_pts)
    return PhaseField(chart=chart, mass=mass, library=library, h=h, t_max=t_max, analytic=analytic)


def phase_eval(field, t, x, xi):
    """Spec-facing wrapper around PhaseField.eval."""
    return field.eval(t, x, xi)


def transport_flow(field, s, t, x, xi):
    """Z_h(s, t, x, xi): x-space flow of V_h with Z(t, t, x, xi) = x.

    The transport characteristics coincide with the position projection of the
    bicharacteristics, so Z(s, t, x, xi) = X(s; y(t, x, xi), xi).
    """
    single = np.asarray(x).ndim == 1
    if field.analytic:
        y = field.source_point(t, x, xi)
        y2 = np.atleast_2d(y)
        xi2 = np.atleast_2d(np.asarray(xi, dtype=float))
        y2, xi2 = np.broadcast_arrays(y2, xi2)
        p = np.einsum("bi,bi->b", xi2, xi2) + field.h**2 * field.mass.m_tilde**2
        _, dpsi = field.library.psi(p, order=1)
        Z = y2 - s * 2.0 * dpsi[:, None] * xi2
        return Z[0] if single else Z
    y, _ = invert_flow(field.chart, field.mass, field.library, field.h, t, x, xi, jacobian=False)
    path = integrate_flow(field.chart, field.mass, field.library, field.h, s, y, xi, check_drift=False)
    Z = path.X[-1]
    return Z[0] if single else Z


def _default_certify_grid(chart, library):
    d = chart.dim
    lo, hi = library.support
    rads = np.sqrt(np.linspace(lo * 1.02, hi * 0.98, 4))
    xs = np.linspace(-1.5, 1.5, 5)
    x_pts = np.stack(np.meshgrid(*([xs] * d), indexing="ij"), axis=-1).reshape(-1, d)
    if d == 1:
        xi_pts = np.concatenate([rads, -rads])[:, None]
    else:
        angles = np.linspace(0.0, 2 * np.pi, 7)[:-1]
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        if d > 2:
            dirs = np.concatenate([dirs, np.zeros((dirs.shape[0], d - 2))], axis=-1)
        xi_pts = (rads[:, None, None] * dirs[None]).reshape(-1, d)
    return x_pts, xi_pts


def certify_t0(chart, mass, library, h_list, x_points, xi_points, *, t_start=1.0, threshold=0.5, max_halvings=10):
    """Largest dyadic t with ||grad_x grad_xi S - I|| <= threshold on the grid."""
    x_points = np.asarray(x_points, dtype=float)
    xi_points = np.asarray(xi_points, dtype=float)
    X = np.repeat(x_points, len(xi_points), axis=0)
    XI = np.tile(xi_points, (len(x_points), 1))
    t = t_start
    for _ in range(max_halvings):
        ok = True
        for h in h_list:
            try:
                _, path = invert_flow(chart, mass, library, h, t, X, XI)
            except CausticError:
                ok = False
                break
            d = chart.dim
            mixed = np.linalg.inv(path.J[-1][:, :d, :d])
            dev = mixed - np.eye(d)
            norm = np.linalg.norm(dev, ord=2, axis=(-2, -1)).max()
            if norm > threshold:
                ok = False
                break
        if ok:
            return t
        t *= 0.5
    raise CausticError(f"could not certify any t0 down to {t:.3e}")


def remainder_bound_check(field, t_values, x_points, xi_points):
    """Fit sup_{x,xi} |S_h - x.xi - t psi(p)| against |t| in log-log.

    Returns ("exact", 0.0) when every residual sits at the roundoff floor
    (flat chart), else (slope, C) with C = max_t sup/t^2.
    """
    x_points = np.asarray(x_points, dtype=float)
    xi_points = np.asarray(xi_points, dtype=float)
    X = np.repeat(x_points, len(xi_points), axis=0)
    XI = np.tile(xi_points, (len(x_points), 1))
    sym = _Symbol(field.chart, field.mass, field.library, field.h)
    q0 = sym.first(X, XI)[0]
    lin = np.einsum("bi,bi->b", X, XI)
    sups = []
    for t in t_values:
        S = field.eval(t, X, XI)[0]
        sups.append(np.max(np.abs(S - lin - t * q0)))
    sups = np.asarray(sups)
    # 1e-12 sits above the roundoff floor of the multi-step integration while
    # staying far below any genuine O(t^2) remainder at the tested t values
    if np.all(sups < 1e-12):
        return "exact", 0.0
    slope, _, _ = loglog_fit(np.abs(t_values), sups)
    C = float(np.max(sups / np.asarray(t_values) ** 2))
    return slope, C


def remainder_sweep(chart, mass, library, h_list, t_values, x_points, xi_points, *, t_max=None):
    """remainder_bound_check across an h sweep; returns list of (h, slope, C)."""
    rows = []
    for h in h_list:
        field = build_phase_field(chart, mass, library, h, t_max=t_max, analytic=False)
        slope, C = remainder_bound_check(field, t_values, x_points, xi_points)
        rows.append((h, slope, C))
    return rows
