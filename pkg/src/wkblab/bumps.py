"""Smooth compactly supported cutoffs with exact derivatives.

Everything here is built from the single mother function exp(-1/s): a
normalized even bump, a smooth 0-to-1 step, and plateau bumps that are
exactly 1 on an inner interval.  Derivatives up to fourth order are
propagated through the compositions with truncated Taylor jets, so no
finite differencing is involved anywhere in the cutoff layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Jet4",
    "unit_bump",
    "unit_bump_w",
    "smooth_step",
    "PlateauBump",
    "LowStep",
]

_ORDER = 4
_FACT = np.array([math.factorial(k) for k in range(_ORDER + 1)])


class Jet4:
    """Degree-4 Taylor jet of a scalar field over a numpy array.

    Coefficients are Taylor coefficients a_k = f^(k)/k!, so products are
    truncated Cauchy convolutions.
    """

    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = list(coeffs)

    @classmethod
    def variable(cls, x):
        x = np.asarray(x, dtype=float)
        one = np.ones_like(x)
        zero = np.zeros_like(x)
        return cls([x, one, zero, zero, zero])

    @classmethod
    def constant(cls, value, like):
        like = np.asarray(like, dtype=float)
        zero = np.zeros_like(like)
        return cls([np.full_like(like, value), zero, zero, zero, zero])

    def derivatives(self):
        """Return (f, f', f'', f''', f'''') as arrays."""
        return [self.c[k] * _FACT[k] for k in range(_ORDER + 1)]

    def __add__(self, other):
        if isinstance(other, Jet4):
            return Jet4([a + b for a, b in zip(self.c, other.c)])
        out = [c.copy() for c in self.c]
        out[0] = out[0] + other
        return Jet4(out)

    __radd__ = __add__

    def __neg__(self):
        return Jet4([-a for a in self.c])

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet4) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet4):
            out = []
            for k in range(_ORDER + 1):
                acc = sum(self.c[j] * other.c[k - j] for j in range(k + 1))
                out.append(acc)
            return Jet4(out)
        return Jet4([a * other for a in self.c])

    __rmul__ = __mul__

    def reciprocal(self):
        b0 = 1.0 / self.c[0]
        out = [b0]
        for k in range(1, _ORDER + 1):
            acc = sum(self.c[j] * out[k - j] for j in range(1, k + 1))
            out.append(-b0 * acc)
        return Jet4(out)

    def __truediv__(self, other):
        if isinstance(other, Jet4):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def exp(self):
        b = [np.exp(self.c[0])]
        for k in range(1, _ORDER + 1):
            acc = sum(j * self.c[j] * b[k - j] for j in range(1, k + 1))
            b.append(acc / k)
        return Jet4(b)

    def sqrt(self):
        b0 = np.sqrt(self.c[0])
        out = [b0]
        for k in range(1, _ORDER + 1):
            acc = sum(out[j] * out[k - j] for j in range(1, k))
            out.append((self.c[k] - acc) / (2.0 * b0))
        return Jet4(out)


def _scatter(shape, mask, jets_inside):
    """Assemble full derivative arrays from jets computed on a mask."""
    out = [np.zeros(shape) for _ in range(_ORDER + 1)]
    if np.any(mask):
        ders = jets_inside.derivatives()
        for k in range(_ORDER + 1):
            out[k][mask] = ders[k]
    return out


def unit_bump(s, order=0):
    """Even bump exp(-s^2/(1-s^2)) on |s|<1, 0 outside; peak value 1 at 0.

    Returns value when order=0, else a list [f, f', ..., f^(order)].
    """
    s = np.asarray(s, dtype=float)
    mask = np.abs(s) < 1.0
    if order == 0:
        out = np.zeros(s.shape)
        sm = s[mask]
        out[mask] = np.exp(-sm * sm / (1.0 - sm * sm))
        return out
    jet_s = Jet4.variable(s[mask])
    w = jet_s * jet_s
    f = (-(w) / (1.0 - w)).exp()
    return [a for a in _scatter(s.shape, mask, f)][: order + 1]


def unit_bump_w(w, order=0):
    """unit_bump expressed in w = s^2: exp(-w/(1-w)) on w<1, 0 for w>=1.

    Smooth in w through w=0, which keeps metric perturbations smooth at the
    bump center.  Returns [b, db/dw, ...] up to the requested order.
    """
    w = np.asarray(w, dtype=float)
    mask = w < 1.0
    jet = Jet4.variable(w[mask])
    f = (-(jet) / (1.0 - jet)).exp()
    ders = _scatter(w.shape, mask, f)
    if order == 0:
        return ders[0]
    return ders[: order + 1]


def _step_core(u):
    """Jet of B(u)/(B(u)+B(1-u)) with B(u)=exp(-1/u), valid on 0<u<1."""
    ju = Jet4.variable(u)
    bu = (-(ju.reciprocal())).exp()
    bv = (-((1.0 - ju).reciprocal())).exp()
    return bu / (bu + bv)


def smooth_step(u, order=0):
    """Monotone C^inf step: 0 for u<=0, 1 for u>=1.

    Returns value or the list of derivatives up to `order` (<=4).
    """
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    ders = _scatter(u.shape, inside, _step_core(u[inside]))
    ders[0][u >= 1.0] = 1.0
    if order == 0:
        return ders[0]
    return ders[: order + 1]


@dataclass(frozen=True)
class PlateauBump:
    """Bump supported on [lo, hi], identically 1 on [plateau_lo, plateau_hi]."""

    lo: float
    plateau_lo: float
    plateau_hi: float
    hi: float

    def __post_init__(self):
        if not (self.lo < self.plateau_lo <= self.plateau_hi < self.hi):
            raise ValueError(f"plateau bump edges not ordered: {self}")

    @property
    def support(self):
        return (self.lo, self.hi)

    def __call__(self, lam, order=0):
        lam = np.asarray(lam, dtype=float)
        rise_w = self.plateau_lo - self.lo
        fall_w = self.hi - self.plateau_hi
        rise = smooth_step((lam - self.lo) / rise_w, order=order)
        fall = smooth_step((self.hi - lam) / fall_w, order=order)
        if order == 0:
            return rise * fall
        # chain rule scale factors, then Leibniz product up to order 4
        ru = [rise[k] / rise_w**k for k in range(order + 1)]
        fu = [fall[k] * (-1.0 / fall_w) ** k for k in range(order + 1)]
        out = []
        for k in range(order + 1):
            out.append(sum(math.comb(k, j) * ru[j] * fu[k - j] for j in range(k + 1)))
        return out


@dataclass(frozen=True)
class LowStep:
    """Smooth decreasing cutoff: 1 for lam <= edge_lo, 0 for lam >= edge_hi.

    Used as the low-frequency piece of the dyadic partition; on [0, inf) it
    is compactly supported in the spectral sense.
    """

    edge_lo: float
    edge_hi: float

    def __call__(self, lam, order=0):
        lam = np.asarray(lam, dtype=float)
        w = self.edge_hi - self.edge_lo
        s = smooth_step((self.edge_hi - lam) / w, order=order)
        if order == 0:
            return s
        return [s[k] * (-1.0 / w) ** k for k in range(order + 1)]
