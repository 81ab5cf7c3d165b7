"""Vectorized fixed-order Gauss rules applied cell by cell."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import special


@lru_cache(maxsize=None)
def legendre_rule(m: int):
    x, w = np.polynomial.legendre.leggauss(m)
    return x, w


@lru_cache(maxsize=None)
def jacobi_rule(m: int, beta: float):
    # weight (1 + x)^beta on [-1, 1]
    x, w = special.roots_jacobi(m, 0.0, beta)
    return x, w


def cell_points(a, b, m: int):
    """Gauss-Legendre nodes and weights for every cell ``[a_i, b_i]``, shape (n, m)."""
    x, w = legendre_rule(m)
    a = np.asarray(a, float)[:, None]
    b = np.asarray(b, float)[:, None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def integrate_cells(func, a, b, m: int = 10) -> np.ndarray:
    """Per-cell Gauss-Legendre integrals of a vectorized ``func``."""
    pts, wts = cell_points(a, b, m)
    if pts.size == 0:
        return np.zeros(0)
    vals = np.asarray(func(pts.ravel()), float).reshape(pts.shape)
    return np.sum(vals * wts, axis=1)


def integrate_singular_start(func_smooth, b: float, beta: float, m: int = 20) -> float:
    """``int_0^b x^beta func_smooth(x) dx`` by Gauss-Jacobi, ``beta > -1``."""
    if b <= 0:
        return 0.0
    x, w = jacobi_rule(m, float(beta))
    pts = 0.5 * b * (x + 1.0)
    return float((0.5 * b) ** (beta + 1.0) * np.dot(w, func_smooth(pts)))


def dyadic_partition(v: float, levels: int = 60, split: int = 4) -> np.ndarray:
    """Nodes ``0, v 2^-levels, ..., v/2, v`` with each dyadic cell split evenly."""
    coarse = v * 2.0 ** -np.arange(levels, -1, -1, dtype=float)
    fine = [np.linspace(lo, hi, split + 1)[:-1] for lo, hi in zip(coarse[:-1], coarse[1:])]
    return np.concatenate([[0.0], np.concatenate(fine), [v]])
