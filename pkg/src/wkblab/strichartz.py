"""Admissibility algebra, dyadic partitions and mixed-norm experiments.

Exponent identities are computed in exact rational arithmetic (fractions),
with q = infinity handled as 1/q = 0.  The spectral models are the flat
torus (2 pi Z)^d with unit-normalized measure and zonal functions on the
round sphere; both propagate e^{it sqrt(m^2 + lambda)} exactly on
eigencoefficients, standing in for the parametrix on model manifolds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.special import eval_gegenbauer

from .bumps import LowStep
from .util import gauss_legendre, loglog_fit, trapezoid_weights

__all__ = [
    "INF",
    "AdmissiblePair",
    "ExponentReport",
    "DyadicPartition",
    "classify",
    "exponents",
    "gamma_wave",
    "gamma_kg",
    "tt_star_exponent",
    "build_partition",
    "TorusModel",
    "SphereZonalModel",
    "spectral_propagate",
    "mixed_norm",
    "trial_coefficients",
    "loss_exponent_fit",
    "LossFitReport",
]

INF = math.inf


def _inv(q):
    """1/q as a Fraction, with 1/inf = 0."""
    if q == INF:
        return Fraction(0)
    if isinstance(q, Fraction):
        return 1 / q
    if isinstance(q, int):
        return Fraction(1, q)
    return Fraction(1) / Fraction(q).limit_denominator(10**9)


@dataclass(frozen=True)
class AdmissiblePair:
    p: object
    q: object
    d: int
    klass: str  # "wave" or "schrodinger"

    def __post_init__(self):
        if self.klass not in classify(self.p, self.q, self.d):
            raise ValueError(f"(p={self.p}, q={self.q}, d={self.d}) is not {self.klass} admissible")


@dataclass(frozen=True)
class ExponentReport:
    gamma_w: Fraction
    gamma_kg: Fraction
    predicted_loss: Fraction
    kappa: Fraction


def classify(p, q, d):
    """Admissibility classes of (p, q) in dimension d.

    The endpoint exclusions (2, inf, 3) for wave and (2, inf, 2) for
    Schrodinger are applied exactly; q = inf is admitted as the limiting
    exponent away from those triples.
    """
    out = set()
    ip, iq = _inv(p), _inv(q)
    if ip > Fraction(1, 2) or (q != INF and iq > Fraction(1, 2)) or iq < 0:
        return out
    if 2 * ip + (d - 1) * iq <= Fraction(d - 1, 2) and not (p == 2 and q == INF and d == 3):
        out.add("wave")
    if 2 * ip + d * iq <= Fraction(d, 2) and not (p == 2 and q == INF and d == 2):
        out.add("schrodinger")
    return out


def gamma_wave(p, q, d):
    """gamma^W = d (1/2 - 1/q) - 1/p."""
    return d * (Fraction(1, 2) - _inv(q)) - _inv(p)


def gamma_kg(p, q, d):
    """gamma^KG = (1 + d)(1/2 - 1/q) - 1/p."""
    return (1 + d) * (Fraction(1, 2) - _inv(q)) - _inv(p)


def tt_star_exponent(delta, tau, p, q):
    """kappa = delta (1/2 - 1/q) - 1/p from the TT* machinery.

    Requires 1/p <= tau (1/2 - 1/q) and (p, q, tau) != (2, inf, 1).
    """
    ip, iq = _inv(p), _inv(q)
    tau_f = Fraction(tau) if not isinstance(tau, float) else Fraction(tau).limit_denominator(10**9)
    if ip > tau_f * (Fraction(1, 2) - iq):
        raise ValueError(f"TT* precondition 1/p <= tau(1/2 - 1/q) fails: 1/{p} > {tau}*(1/2 - 1/{q})")
    if p == 2 and q == INF and tau_f == 1:
        raise ValueError("TT* endpoint (p, q, tau) = (2, inf, 1) is excluded")
    delta_f = Fraction(delta) if not isinstance(delta, float) else Fraction(delta).limit_denominator(10**9)
    return delta_f * (Fraction(1, 2) - iq) - ip


def exponents(pair):
    """ExponentReport for an admissible pair; all entries exact rationals."""
    p, q, d = pair.p, pair.q, pair.d
    gw = gamma_wave(p, q, d)
    gkg = gamma_kg(p, q, d)
    if pair.klass == "wave":
        loss = gw
        kappa = tt_star_exponent(d, Fraction(d - 1, 2), p, q)
    else:
        loss = gkg + _inv(p) / 2
        kappa = tt_star_exponent(d + 1, Fraction(d, 2), p, q)
    return ExponentReport(gamma_w=gw, gamma_kg=gkg, predicted_loss=loss, kappa=kappa)


# ---------------------------------------------------------------------------
# Littlewood-Paley partition


@dataclass(frozen=True)
class DyadicPartition:
    """Telescoped dyadic partition: phi_tilde(lam) + sum_k phi(4^{-k} lam) = 1."""

    phi_tilde_lp: LowStep
    K_max: int

    def phi(self, lam, order=0):
        """Annulus bump phi(lam) = theta(lam) - theta(4 lam), supp in [1/4, 4]."""
        lam = np.asarray(lam, dtype=float)
        lo = self.phi_tilde_lp(lam, order=order)
        hi = self.phi_tilde_lp(4.0 * lam, order=order)
        if order == 0:
            return lo - hi
        return [lo[k] - hi[k] * 4.0**k for k in range(order + 1)]

    def multiplier(self, k, lam):
        """k = 0: low piece; k >= 1: phi(2^{-2k} lam)."""
        lam = np.asarray(lam, dtype=float)
        if k == 0:
            return self.phi_tilde_lp(lam)
        return self.phi(lam * 4.0**-k)

    def partition_sum(self, lam):
        lam = np.asarray(lam, dtype=float)
        total = self.phi_tilde_lp(lam).copy()
        for k in range(1, self.K_max + 1):
            total = total + self.phi(lam * 4.0**-k)
        return total


def build_partition(K_max):
    """Construct the partition and verify the identity on a log grid."""
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    part = DyadicPartition(phi_tilde_lp=LowStep(edge_lo=1.0, edge_hi=4.0), K_max=K_max)
    lam = np.concatenate([[0.0], np.geomspace(1e-3, 2.0 ** (2 * K_max - 1), 4096)])
    err = np.max(np.abs(part.partition_sum(lam) - 1.0))
    if err > 1e-10:
        raise AssertionError(f"partition identity violated by {err:.3e}")
    return part


# ---------------------------------------------------------------------------
# spectral models


class TorusModel:
    """Flat torus (2 pi Z)^d-periodic with unit-normalized measure."""

    def __init__(self, d):
        self.d = int(d)

    def eigenvalue(self, modes):
        modes = np.asarray(modes)
        return np.sum(modes.astype(float) ** 2, axis=-1)

    def shell_modes(self, partition, k):
        """Lattice modes with phi(4^{-k} |n|^2) > 0, with the multiplier values."""
        nmax = int(2 ** (k + 1))
        rng = np.arange(-nmax, nmax + 1)
        grids = np.meshgrid(*([rng] * self.d), indexing="ij")
        modes = np.stack([g.ravel() for g in grids], axis=-1)
        w = partition.multiplier(k, self.eigenvalue(modes))
        keep = w > 0
        return modes[keep], w[keep]

    def synthesize(self, modes, coeffs, M):
        """Point values of sum c_n e^{i n.x} on the uniform M^d grid via FFT."""
        C = np.zeros((M,) * self.d, dtype=complex)
        idx = tuple(np.mod(modes[:, j], M) for j in range(self.d))
        np.add.at(C, idx, coeffs)
        return np.fft.ifftn(C) * M**self.d

    def l2_norm(self, coeffs):
        return float(np.linalg.norm(coeffs))

    def grid_weights(self, M):
        return np.full(M**self.d, 1.0 / M**self.d)


class SphereZonalModel:
    """Zonal (rotation-invariant) functions on S^d with unit-normalized measure.

    Basis e_k(theta) proportional to Gegenbauer C_k^{(d-1)/2}(cos theta),
    L^2-normalized against the polar weight; Laplacian eigenvalue k(k+d-1).
    """

    def __init__(self, d, n_theta=512):
        self.d = int(d)
        x, w = gauss_legendre(n_theta, -1.0, 1.0)
        self.cos_theta = x
        # unit total measure: integral of weight over theta equals 1
        raw = w * (1.0 - x**2) ** ((self.d - 2) / 2.0) if self.d > 1 else w
        self.weights = raw / raw.sum()

    def eigenvalue(self, ks):
        ks = np.asarray(ks, dtype=float)
        return ks * (ks + self.d - 1)

    def basis(self, k):
        alpha = (self.d - 1) / 2.0
        vals = eval_gegenbauer(k, alpha, self.cos_theta)
        norm = math.sqrt(float(np.sum(self.weights * vals**2)))
        return vals / norm

    def synthesize(self, ks, coeffs, M=None):
        out = np.zeros_like(self.cos_theta, dtype=complex)
        for k, c in zip(ks, coeffs):
            out += c * self.basis(int(k))
        return out

    def l2_norm(self, coeffs):
        return float(np.linalg.norm(coeffs))

    def grid_weights(self, M=None):
        return self.weights


def spectral_propagate(model, m, t, modes, coeffs, M=None):
    """Multiply eigencoefficients by e^{it sqrt(m^2 + lambda)} and synthesize."""
    lam = model.eigenvalue(modes)
    phased = np.asarray(coeffs, dtype=complex) * np.exp(1j * t * np.sqrt(m**2 + lam))
    return model.synthesize(modes, phased, M) if M is not None else model.synthesize(modes, phased)


def mixed_norm(samples, p, q, t_weights, x_weights):
    """L^p in time of the L^q spatial norm; trapezoid in t, model weights in x.

    samples has shape (Nt, Nx); p or q = inf are grid maxima.
    """
    samples = np.abs(np.asarray(samples))
    x_weights = np.asarray(x_weights, dtype=float).ravel()
    flat = samples.reshape(samples.shape[0], -1)
    if q == INF:
        space = flat.max(axis=1)
    else:
        space = (flat**q @ x_weights) ** (1.0 / q)
    if p == INF:
        return float(space.max())
    t_weights = np.asarray(t_weights, dtype=float)
    return float((t_weights @ space**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# loss-exponent regression


def trial_coefficients(partition, model, k, trial, seed):
    """Shell-localized trial data; Philox counter-based so runs reproduce.

    trial 0: coherent cap (Gaussian envelope of width 2^{k/2} about the shell
    center); trial 1: single lattice mode; trial >= 2: random complex
    Gaussian coefficients drawn from Philox(key=seed, counter=[0, 0, trial, k]).
    """
    modes, w = model.shell_modes(partition, k)
    if trial == 0:
        center = np.zeros(model.d)
        center[0] = 2.0**k
        sigma = 2.0 ** (k / 2.0)
        env = np.exp(-np.sum((modes - center) ** 2, axis=-1) / (2.0 * sigma**2))
        c = env * w
    elif trial == 1:
        c = np.zeros(len(modes))
        target = np.zeros(model.d)
        target[0] = 2.0**k
        c[int(np.argmin(np.sum((modes - target) ** 2, axis=-1)))] = 1.0
    else:
        bitgen = np.random.Philox(counter=[0, 0, trial, k], key=[seed, 0])
        g = np.random.Generator(bitgen)
        c = (g.standard_normal(len(modes)) + 1j * g.standard_normal(len(modes))) * w
    c = np.asarray(c, dtype=complex)
    norm = np.linalg.norm(c)
    return modes, c / norm


@dataclass
class LossFitReport:
    slope: float
    intercept: float
    rows: list  # (k, trial, quotient)
    per_shell_max: dict
    residual_trend: Optional[float] = None


def loss_exponent_fit(
    model,
    m,
    pair,
    k_range,
    *,
    seed=0,
    n_random=16,
    n_t=24,
    t_interval=(0.0, 1.0),
    partition=None,
):
    """Regress log of the Strichartz quotient against k log 2 over dyadic shells.

    The quotient max_{trials} ||e^{itP^{1/2}} u_k||_{L^p L^q} / ||u_k||_{L^2}
    is a lower bound for the localized operator norm; its slope is compared
    against the predicted loss by the caller.
    """
    k_range = list(k_range)
    if len(k_range) < 4:
        raise ValueError("need at least 4 dyadic shells for the loss fit")
    if partition is None:
        partition = build_partition(max(k_range) + 1)
    p, q = pair.p, pair.q
    ts = np.linspace(t_interval[0], t_interval[1], n_t)
    t_w = trapezoid_weights(ts)
    rows = []
    per_shell = {}
    for k in k_range:
        best = 0.0
        for trial in range(2 + n_random):
            modes, coeffs = trial_coefficients(partition, model, k, trial, seed)
            M = int(2 ** (k + 3)) if isinstance(model, TorusModel) else None
            samples = np.empty((n_t, M**model.d if M else len(model.grid_weights())), dtype=float)
            for i, t in enumerate(ts):
                u = spectral_propagate(model, m, t, modes, coeffs, M)
                samples[i] = np.abs(u).ravel()
            Q = mixed_norm(samples, p, q, t_w, model.grid_weights(M))
            rows.append((k, trial, Q))
            best = max(best, Q)
        per_shell[k] = best
    ks = np.array(sorted(per_shell))
    qs = np.array([per_shell[k] for k in ks])
    slope, intercept, _ = loglog_fit(2.0**ks, qs)
    return LossFitReport(slope=slope, intercept=intercept, rows=rows, per_shell_max=per_shell)


def residual_trend(report, gamma):
    """Slope of log Q_k - gamma k log 2 against k log 2 (excess-trend check)."""
    ks = np.array(sorted(report.per_shell_max))
    resid = np.array([math.log(report.per_shell_max[k]) - float(gamma) * k * math.log(2.0) for k in ks])
    x = ks * math.log(2.0)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, resid, rcond=None)
    return float(coef[0])
