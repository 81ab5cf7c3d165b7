"""Distribution functions, decreasing rearrangements and Schwarz symmetrizations.

A measurable function on a finite measure space is represented by a list of
cells ``(value, weight)``.  The decreasing rearrangement of ``|u|`` is then a
non-increasing step function on ``[0, total_mass]``.  Breakpoints are the
correctly rounded prefix sums of the sorted weights, so the measure of
``{u_sharp > t}`` agrees bit-for-bit with ``math.fsum`` of the weights of
``{|u| > t}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model_space import ModelParams, eval_H, inv_H

MASS_TOL = 1e-12


def _exact_prefix_sums(xs) -> np.ndarray:
    """Correctly rounded prefix sums (Shewchuk partials, one ``fsum`` per prefix)."""
    partials: list[float] = []
    out = np.empty(len(xs) + 1)
    out[0] = 0.0
    for k, x in enumerate(xs):
        x = float(x)
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]
        out[k + 1] = math.fsum(partials)
    return out


@dataclass(frozen=True)
class WeightedFunction:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        wts = np.asarray(self.weights, dtype=float).ravel()
        if vals.shape != wts.shape:
            raise ValueError("values and weights must have the same length")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        if np.any(wts < 0) or not np.all(np.isfinite(wts)):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "weights", wts)

    @classmethod
    def from_cells(cls, cells):
        cells = list(cells)
        return cls(np.array([c[0] for c in cells], float), np.array([c[1] for c in cells], float))

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def scaled(self, c: float) -> "WeightedFunction":
        return WeightedFunction(c * self.values, self.weights)


@dataclass(frozen=True)
class StepFunction:
    """Non-increasing, left-continuous step function on ``[0, breakpoints[-1]]``.

    ``values[i]`` is taken on ``(breakpoints[i], breakpoints[i+1]]`` and at
    ``s = 0`` the first value is returned.  ``masses[i]`` is the correctly
    rounded total weight behind step ``i``.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    masses: np.ndarray = field(default=None)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if bp.ndim != 1 or vals.ndim != 1 or bp.size != vals.size + 1:
            raise ValueError("need len(breakpoints) == len(values) + 1")
        if bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if np.any(np.diff(vals) > 0):
            raise ValueError("values must be non-increasing")
        masses = np.diff(bp) if self.masses is None else np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "masses", masses)

    @property
    def total_mass(self) -> float:
        return float(self.breakpoints[-1])

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="left") - 1
        idx = np.clip(idx, 0, self.values.size - 1)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def superlevel_measure(self, t: float) -> float:
        """Lebesgue measure of ``{s : value(s) > t}``."""
        j = int(np.count_nonzero(self.values > t))
        return float(self.breakpoints[j])

    def integral(self, upto: float | None = None) -> float:
        """``int_0^upto`` of the step function (whole support by default)."""
        if upto is None:
            return math.fsum(self.values * self.masses)
        upto = min(max(float(upto), 0.0), self.total_mass)
        j = int(np.searchsorted(self.breakpoints, upto, side="right")) - 1
        j = min(j, self.values.size)
        full = math.fsum(self.values[:j] * self.masses[:j])
        if j < self.values.size:
            full += self.values[j] * (upto - self.breakpoints[j])
        return full

    def cumulative(self, s):
        """Vectorized ``F(s) = int_0^s`` of the step function."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.total_mass)
        cum = np.concatenate([[0.0], np.cumsum(self.values * np.diff(self.breakpoints))])
        j = np.clip(np.searchsorted(self.breakpoints, s, side="right") - 1, 0, self.values.size - 1)
        return cum[j] + self.values[j] * (s - self.breakpoints[j])


def distribution_function(u: WeightedFunction, t: float) -> float:
    """``mu(t) = m({|u| > t})``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return math.fsum(u.weights[np.abs(u.values) > t])


def decreasing_rearrangement(u: WeightedFunction) -> StepFunction:
    keep = u.weights > 0
    a = np.abs(u.values[keep])
    w = u.weights[keep]
    if a.size == 0:
        raise ValueError("function has no positive-mass cells")
    order = np.lexsort((np.arange(a.size), -a))
    a, w = a[order], w[order]
    prefix = _exact_prefix_sums(w)
    # merge ties: keep the last occurrence of each distinct value
    last = np.ones(a.size, dtype=bool)
    last[:-1] = a[1:] != a[:-1]
    ends = np.nonzero(last)[0] + 1
    bp = np.concatenate([[0.0], prefix[ends]])
    starts = np.concatenate([[0], ends[:-1]])
    masses = np.array([math.fsum(w[s:e]) for s, e in zip(starts, ends)]) if a.size != ends.size else w.copy()
    return StepFunction(bp, a[last], masses)


def lp_norm(u, p: float) -> float:
    """Weighted ``L^p`` norm of a ``WeightedFunction`` or ``StepFunction``."""
    if isinstance(u, StepFunction):
        vals, wts = np.abs(u.values), u.masses
    else:
        vals, wts = np.abs(u.values), u.weights
    if math.isinf(p):
        pos = wts > 0
        return float(vals[pos].max()) if pos.any() else 0.0
    if p < 1:
        raise ValueError("p must be >= 1")
    s = math.fsum((vals**p) * wts)
    return s ** (1.0 / p)


def lp_distance(a: StepFunction, b: StepFunction, p: float) -> float:
    """``||a - b||_p`` for two step functions on the same interval."""
    if abs(a.total_mass - b.total_mass) > MASS_TOL:
        raise ValueError("step functions live on intervals of different length")
    bp = np.union1d(a.breakpoints, b.breakpoints)
    bp = bp[bp <= min(a.total_mass, b.total_mass)]
    mids = 0.5 * (bp[:-1] + bp[1:])
    diff = np.abs(a(mids) - b(mids))
    lengths = np.diff(bp)
    if math.isinf(p):
        return float(diff.max())
    return math.fsum(diff**p * lengths) ** (1.0 / p)


def hardy_littlewood_bound(f: WeightedFunction, subset_mass: float) -> float:
    """``int_0^subset_mass f_sharp``, the sharp upper bound for ``int_E |f|``."""
    total = f.total_mass
    if subset_mass < 0 or subset_mass > total + MASS_TOL:
        raise ValueError("subset_mass must lie in [0, total_mass]")
    if subset_mass == 0:
        return 0.0
    return decreasing_rearrangement(f).integral(subset_mass)


class SchwarzSymmetrization:
    """``u_star = u_sharp o H_{K,N}`` on ``[0, r_v]``.

    Step boundaries are mapped once to radii ``inv_H(breakpoints)`` so that
    evaluation is a lookup in radius, left-continuous like ``u_sharp``.
    """

    def __init__(self, sharp: StepFunction, params: ModelParams):
        v = sharp.total_mass
        if not 0 < v <= 1 + MASS_TOL:
            raise ValueError("total mass must lie in (0, 1]")
        self.sharp = sharp
        self.params = params
        self.v = min(v, 1.0)
        self.radii = inv_H(params, np.minimum(sharp.breakpoints, 1.0))
        self.radii[0] = 0.0
        self.r_v = float(self.radii[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.radii, x, side="left") - 1, 0, self.sharp.values.size - 1)
        out = self.sharp.values[idx]
        return float(out) if out.ndim == 0 else out

    def superlevel_measure(self, t: float) -> float:
        """``m_{K,N}({u_star > t})``."""
        j = int(np.count_nonzero(self.sharp.values > t))
        return float(eval_H(self.params, self.radii[j]))

    def lp_norm(self, p: float) -> float:
        masses = np.diff(eval_H(self.params, self.radii))
        vals = np.abs(self.sharp.values)
        if math.isinf(p):
            return float(vals[masses > 0].max())
        return math.fsum(vals**p * masses) ** (1.0 / p)


def schwarz_symmetrize(u: WeightedFunction, params: ModelParams) -> SchwarzSymmetrization:
    return SchwarzSymmetrization(decreasing_rearrangement(u), params)


def sample_on_model(func, params: ModelParams, v: float, n_cells: int = 4096) -> WeightedFunction:
    """Sample ``func(rho)`` on ``[0, r_v]`` into ``n_cells`` equal-measure cells.

    Each cell takes the value at its measure midpoint; for Lipschitz ``func`` the
    sup-distance to the continuum function is ``O(1/n_cells)``.
    """
    edges = np.linspace(0.0, v, n_cells + 1)
    mids = inv_H(params, 0.5 * (edges[:-1] + edges[1:]))
    return WeightedFunction(np.asarray(func(mids), float), np.diff(edges))
