"""One-dimensional model spaces ``J_{K,N}`` with density ``h_{K,N}``.

The interval ``[0, D]`` with ``D = pi * sqrt((N-1)/K)`` carries the probability
density ``h(t) = sin^{N-1}(t sqrt(K/(N-1))) / c``.  For integer ``N`` this is the
radial profile of the round ``N``-sphere of Ricci curvature ``K``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, optimize, special

CLAMP_TOL = 1e-12


class ModelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    K: float
    N: float

    def __post_init__(self):
        if not (math.isfinite(self.K) and self.K > 0):
            raise ModelDomainError(f"K must be positive, got {self.K}")
        if not (math.isfinite(self.N) and self.N > 1):
            raise ModelDomainError(f"N must lie in (1, inf), got {self.N}")

    @property
    def scale(self) -> float:
        return math.sqrt(self.K / (self.N - 1))

    @property
    def D(self) -> float:
        return math.pi / self.scale

    @cached_property
    def c(self) -> float:
        """Normalizing constant, by adaptive Gauss-Kronrod quadrature."""
        a = self.N - 1
        s = self.scale
        val, _ = integrate.quad(
            lambda t: math.sin(t * s) ** a, 0.0, self.D, epsabs=0.0, epsrel=1e-13, limit=200
        )
        return val


@dataclass(frozen=True)
class ModelConstants:
    gamma1: float
    gamma2: float


def _check_t(p: ModelParams, t):
    t = np.asarray(t, dtype=float)
    D = p.D
    if np.any(t < -CLAMP_TOL) or np.any(t > D + CLAMP_TOL):
        raise ModelDomainError(f"t outside [0, {D}]")
    return np.clip(t, 0.0, D)


def _sin_pow(p: ModelParams, t):
    # exp((N-1) log sin) with the endpoint limits pinned to zero
    theta = np.asarray(t) * p.scale
    s = np.sin(theta)
    out = np.zeros_like(s)
    pos = (s > 0) & (theta > 0) & (theta < math.pi)
    out[pos] = np.exp((p.N - 1) * np.log(s[pos]))
    return out


def eval_h(p: ModelParams, t):
    """Density ``h_{K,N}(t)``; scalar in, scalar out."""
    tt = _check_t(p, t)
    out = _sin_pow(p, np.atleast_1d(tt)) / p.c
    return float(out[0]) if np.ndim(t) == 0 else out.reshape(np.shape(t))


def _H(p: ModelParams, t):
    # normalized incomplete integral of sin^{N-1} through the regularized beta function
    theta = np.atleast_1d(np.asarray(t, dtype=float)) * p.scale
    theta = np.clip(theta, 0.0, math.pi)
    folded = np.minimum(theta, math.pi - theta)
    # near pi/2 go through the complement so 1 - sin^2 keeps its digits
    low = folded <= 0.25 * math.pi
    half = np.empty_like(folded)
    half[low] = 0.5 * special.betainc(0.5 * p.N, 0.5, np.sin(folded[low]) ** 2)
    half[~low] = 0.5 - 0.5 * special.betainc(0.5, 0.5 * p.N, np.cos(folded[~low]) ** 2)
    return np.where(theta <= 0.5 * math.pi, half, 1.0 - half)


def eval_H(p: ModelParams, t):
    """Cumulative distribution ``H_{K,N}(t) = m_{K,N}([0, t])``."""
    tt = _check_t(p, t)
    out = _H(p, tt)
    return float(out[0]) if np.ndim(t) == 0 else out.reshape(np.shape(t))


def inv_H(p: ModelParams, v):
    """Inverse of ``H_{K,N}``.

    Scalars go through Brent's bracketed method; arrays through a vectorized
    bisection carried down to adjacent floats, finished by one secant step.
    """
    va = np.asarray(v, dtype=float)
    if np.any(va < -CLAMP_TOL) or np.any(va > 1 + CLAMP_TOL):
        raise ModelDomainError("v outside [0, 1]")
    va = np.clip(va, 0.0, 1.0)
    D = p.D
    if va.ndim == 0:
        x = float(va)
        if x <= 0.0:
            return 0.0
        if x >= 1.0:
            return D
        return optimize.brentq(lambda r: _H(p, r)[0] - x, 0.0, D, xtol=1e-300, rtol=8.9e-16, maxiter=200)
    flat = va.ravel()
    lo = np.zeros_like(flat)
    hi = np.full_like(flat, D)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = _H(p, mid) < flat
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    Hlo, Hhi = _H(p, lo), _H(p, hi)
    denom = Hhi - Hlo
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, lo + (flat - Hlo) * (hi - lo) / denom, 0.5 * (lo + hi))
    r = np.clip(r, lo, hi)
    r[flat <= 0.0] = 0.0
    r[flat >= 1.0] = D
    return r.reshape(va.shape)


def iso_profile(p: ModelParams, v):
    """Isoperimetric profile ``I_{K,N}(v) = h(H^{-1}(v))``."""
    return eval_h(p, inv_H(p, v))


def model_constants(p: ModelParams) -> ModelConstants:
    g1 = (p.K / (p.N - 1)) ** ((p.N - 1) / 2) / p.c
    return ModelConstants(gamma1=g1, gamma2=g1 / p.N)


def asympt_check(p: ModelParams, n_samples: int = 2001) -> ModelConstants:
    """Return ``gamma1, gamma2`` after verifying the small-``t`` bounds on a grid.

    Checks ``h <= gamma1 t^{N-1}``, ``H <= gamma2 t^N`` on ``[0, D]`` and
    ``H^{-1}(s) >= (s/gamma2)^{1/N}`` on ``(0, 1)``.  Raises ``AssertionError``
    naming the first violating sample.
    """
    const = model_constants(p)
    g1, g2 = const.gamma1, const.gamma2
    t = np.linspace(0.0, p.D, n_samples)
    h = eval_h(p, t)
    H = eval_H(p, t)
    rtol = 1e-12
    bad = np.nonzero(h > g1 * t ** (p.N - 1) * (1 + rtol) + 1e-300)[0]
    if bad.size:
        raise AssertionError(f"h bound violated at t={t[bad[0]]}")
    bad = np.nonzero(H > g2 * t**p.N * (1 + rtol) + 1e-15)[0]
    if bad.size:
        raise AssertionError(f"H bound violated at t={t[bad[0]]}")
    s = np.linspace(0.0, 1.0, n_samples)[1:-1]
    r = inv_H(p, s)
    low = (s / g2) ** (1.0 / p.N)
    bad = np.nonzero(r < low * (1 - rtol) - 1e-12)[0]
    if bad.size:
        raise AssertionError(f"inverse bound violated at s={s[bad[0]]}")
    return const
