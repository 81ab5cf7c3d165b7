"""Weighted Poisson problems on the model interval ``[0, r_v)``.

The model problem ``-alpha (h w')'/h = f_star`` with ``w(r_v) = 0`` and the
natural condition at ``0`` has the explicit solution

    w(rho) = (1/alpha) int_rho^{r_v} F(H(r)) / h(r) dr
           = (1/alpha) int_{H(rho)}^{v} F(s) / I(s)^2 ds,

with ``F(s) = int_0^s f_sharp``.  Both forms are integrated independently here
and their agreement is part of the solver contract.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model_space import ModelParams, eval_H, eval_h, inv_H, iso_profile, model_constants
from .quadrature import (
    cell_points,
    dyadic_partition,
    integrate_cells,
    integrate_singular_start,
)
from .rearrangement import StepFunction

ROUTE_TOL = 1e-10
GRADIENT_ROUTE_TOL = 1e-8
GL_ORDER = 10


class ModelQuadratureError(RuntimeError):
    pass


class EigenConvergenceError(RuntimeError):
    pass


def constant_sharp(value: float, v: float) -> StepFunction:
    return StepFunction(np.array([0.0, v]), np.array([float(value)]))


def clustered_grid(r_v: float, n_grid: int) -> np.ndarray:
    """Chebyshev-Lobatto points on ``[0, r_v]``."""
    k = np.arange(n_grid)
    g = 0.5 * r_v * (1.0 - np.cos(np.pi * k / (n_grid - 1)))
    g[0], g[-1] = 0.0, r_v
    return g


@dataclass(frozen=True)
class ModelSolution:
    params: ModelParams
    v: float
    r_v: float
    alpha: float
    f_sharp: StepFunction
    grid: np.ndarray
    w: np.ndarray
    w_prime: np.ndarray
    w_mass_route: np.ndarray

    @property
    def route_gap(self) -> float:
        return float(np.max(np.abs(self.w - self.w_mass_route)))

    def F(self, s):
        return self.f_sharp.cumulative(s)

    def kink_radii(self) -> np.ndarray:
        inner = self.f_sharp.breakpoints[1:-1]
        return inv_H(self.params, inner) if inner.size else np.zeros(0)

    def radial_partition(self) -> np.ndarray:
        return np.union1d(self.grid, self.kink_radii())

    def mass_partition(self) -> np.ndarray:
        return np.union1d(eval_H(self.params, self.grid[:-1]), np.append(self.f_sharp.breakpoints[1:-1], self.v))

    def derivative(self, rho):
        """``w'(rho) = -F(H(rho)) / (alpha h(rho))``, with the limit 0 at ``rho = 0``."""
        rho = np.asarray(rho, float)
        h = eval_h(self.params, rho)
        F = self.F(eval_H(self.params, rho))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(h > 0, -F / (self.alpha * h), 0.0)
        return out

    def f_star(self, rho):
        return self.f_sharp(eval_H(self.params, rho))

    def tail_from_mass(self, s) -> np.ndarray:
        """``(1/alpha) int_s^v F(xi) / I(xi)^2 dxi`` at arbitrary masses ``s``."""
        s = np.atleast_1d(np.asarray(s, float))
        nodes = np.union1d(self.mass_partition(), np.clip(s, 0.0, self.v))
        tails = _mass_route_tails(self.params, self.f_sharp, self.v, nodes) / self.alpha
        return tails[np.searchsorted(nodes, np.clip(s, 0.0, self.v))]


def _radial_integrand(params: ModelParams, f_sharp: StepFunction):
    def g(r):
        return f_sharp.cumulative(eval_H(params, r)) / eval_h(params, r)

    return g


def _mass_route_tails(params: ModelParams, f_sharp: StepFunction, v: float, nodes: np.ndarray) -> np.ndarray:
    """``int_{nodes[k]}^v F/I^2`` for sorted ``nodes`` starting at 0 and ending at ``v``."""
    half_n = 0.5 * params.N

    def g(u):
        # F(s)/I(s)^2 ~ s^{2/N - 1} near 0; in u = s^{2/N} the integrand is smooth
        s = u**half_n
        return f_sharp.cumulative(s) / iso_profile(params, s) ** 2 * half_n * u ** (half_n - 1.0)

    un = nodes ** (1.0 / half_n)
    pieces = integrate_cells(g, un[:-1], un[1:], GL_ORDER)
    return np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])


def solve_model_poisson(
    params: ModelParams,
    f_sharp: StepFunction,
    v: float | None = None,
    alpha: float = 1.0,
    n_grid: int = 2048,
) -> ModelSolution:
    """Solve ``-alpha Delta_{K,N} w = f_star`` on ``[0, r_v)``, ``w(r_v) = 0``.

    Returns grid samples of ``w`` from the radial representation, the same
    function from the mass representation, and ``w'`` in closed form.  Raises
    ``ModelQuadratureError`` when the two representations disagree beyond
    ``1e-10`` (scaled by ``max(1, |w|)``).
    """
    v = f_sharp.total_mass if v is None else float(v)
    if not 0 < v < 1:
        raise ValueError(f"v must lie in (0, 1), got {v}")
    if abs(v - f_sharp.total_mass) > 1e-10:
        raise ValueError("f_sharp must be defined on [0, v]")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if n_grid < 3:
        raise ValueError("n_grid must be at least 3")
    r_v = float(inv_H(params, v))
    grid = clustered_grid(r_v, n_grid)

    kinks = f_sharp.breakpoints[1:-1]
    kink_r = inv_H(params, kinks) if kinks.size else np.zeros(0)
    rnodes = np.union1d(grid, kink_r)
    cells = integrate_cells(_radial_integrand(params, f_sharp), rnodes[:-1], rnodes[1:], GL_ORDER)
    tails = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]]) / alpha
    w = tails[np.searchsorted(rnodes, grid)]

    snodes_grid = eval_H(params, grid)
    snodes_grid[-1] = v
    snodes = np.union1d(snodes_grid, np.append(kinks, [0.0, v]))
    stails = _mass_route_tails(params, f_sharp, v, snodes) / alpha
    w2 = stails[np.searchsorted(snodes, snodes_grid)]

    sol = ModelSolution(params, v, r_v, float(alpha), f_sharp, grid, w, np.zeros_like(w), w2)
    object.__setattr__(sol, "w_prime", sol.derivative(grid))
    scale = max(1.0, float(np.max(np.abs(w))))
    if not np.all(np.isfinite(w)) or sol.route_gap > ROUTE_TOL * scale:
        raise ModelQuadratureError(
            f"representation formulas disagree by {sol.route_gap:.3e} (tolerance {ROUTE_TOL * scale:.1e})"
        )
    return sol


def weak_form_residual(sol: ModelSolution, phi, dphi) -> float:
    """``|int w' phi' dm - int (f_star/alpha) phi dm|`` for a test function ``phi``."""
    nodes = sol.radial_partition()
    a, b = nodes[:-1], nodes[1:]
    p = sol.params

    def energy(r):
        return sol.derivative(r) * dphi(r) * eval_h(p, r)

    def load(r):
        return sol.f_star(r) * phi(r) * eval_h(p, r) / sol.alpha

    e = math.fsum(integrate_cells(energy, a, b, GL_ORDER))
    l = math.fsum(integrate_cells(load, a, b, GL_ORDER))
    return abs(e - l)


def model_gradient_lq_norm(sol: ModelSolution, q: float) -> float:
    """``int_0^{r_v} |w'|^q dm_{K,N}`` (the integral, not its q-th root).

    Computed in the radial variable and cross-checked against
    ``int_0^v (F/(alpha I))^q``; raises ``ModelQuadratureError`` if the two
    disagree beyond ``1e-8``.
    """
    if not 1 <= q <= 2:
        raise ValueError("q must lie in [1, 2]")
    p = sol.params
    nodes = sol.radial_partition()
    radial = math.fsum(
        integrate_cells(lambda r: np.abs(sol.derivative(r)) ** q * eval_h(p, r), nodes[:-1], nodes[1:], GL_ORDER)
    )
    snodes = sol.mass_partition()
    snodes = np.union1d(snodes, [0.0])

    def g(s):
        return (sol.F(s) / (sol.alpha * iso_profile(p, s))) ** q

    mass = math.fsum(integrate_cells(g, snodes[:-1], snodes[1:], GL_ORDER))
    if abs(radial - mass) > GRADIENT_ROUTE_TOL * max(1.0, abs(radial)):
        raise ModelQuadratureError(f"gradient routes disagree: {radial} vs {mass}")
    return radial


def integral_of_w(sol: ModelSolution) -> float:
    """``int_0^{r_v} w dm_{K,N}`` via ``(1/alpha) int F(H) H / h``."""
    p = sol.params
    nodes = sol.radial_partition()

    def g(r):
        H = eval_H(p, r)
        return sol.F(H) * H / eval_h(p, r)

    return math.fsum(integrate_cells(g, nodes[:-1], nodes[1:], GL_ORDER)) / sol.alpha


def torsional_rigidity_model(params: ModelParams, v: float, n_grid: int = 2048) -> float:
    """``T_{K,N,v}``: integral of the model stress function (``f = 2``, ``alpha = 1``)."""
    sol = solve_model_poisson(params, constant_sharp(2.0, v), v, 1.0, n_grid)
    return integral_of_w(sol)


def _sobolev_kernel(params: ModelParams, p_exp: float):
    inv_p = 0.0 if math.isinf(p_exp) else 1.0 / p_exp

    def g(xi):
        return xi ** (1.0 - inv_p) / iso_profile(params, xi) ** 2

    # g(xi) ~ xi^{2/N - 1/p - 1} near 0
    return g, 2.0 / params.N - inv_p - 1.0


def _sobolev_tails(params: ModelParams, v: float, p_exp: float):
    """Nodes, and ``int_node^v g`` at each node, on a dyadic partition of ``[0, v]``."""
    g, beta = _sobolev_kernel(params, p_exp)
    nodes = dyadic_partition(v)
    cells = integrate_cells(g, nodes[1:-1], nodes[2:], 20)
    if beta > -1:
        first = integrate_singular_start(lambda s: g(s) / s**beta, nodes[1], beta, 24)
    else:
        first = math.inf
    pieces = np.concatenate([[first], cells])
    return nodes, g, np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])


def sobolev_c1(params: ModelParams, v: float, p_exp: float) -> float:
    """``c_1 = int_0^v xi^{1-1/p} / I(xi)^2 dxi`` for ``p > N/2`` (``p = inf`` allowed)."""
    if not 0 < v < 1:
        raise ValueError("v must lie in (0, 1)")
    if not p_exp > params.N / 2:
        raise ValueError(f"c1 needs p > N/2 = {params.N / 2}, got {p_exp}")
    _, _, tails = _sobolev_tails(params, v, p_exp)
    return float(tails[0])


def sobolev_c2(params: ModelParams, v: float, p_exp: float, q_exp: float) -> float:
    """``c_2 = (int_0^v (int_s^v xi^{1-1/p}/I^2 dxi)^q ds)^{1/q}``.

    Valid for ``2 <= p <= N/2`` and ``q (1/p - 2/N) < 1``.
    """
    if not 0 < v < 1:
        raise ValueError("v must lie in (0, 1)")
    if not 2 <= p_exp <= params.N / 2:
        raise ValueError(f"c2 needs 2 <= p <= N/2 = {params.N / 2}, got {p_exp}")
    if q_exp < 1 or q_exp * (1.0 / p_exp - 2.0 / params.N) >= 1:
        raise ValueError("c2 needs q >= 1 and q (1/p - 2/N) < 1")
    nodes, g, tails = _sobolev_tails(params, v, p_exp)
    a, b = nodes[1:-1], nodes[2:]
    pts, wts = cell_points(a, b, 20)
    # G(s) = tail(a) - int_a^s g for every outer node s
    inner_pts, inner_wts = cell_points(np.repeat(a, 20), pts.ravel(), 20)
    partial = np.sum(g(inner_pts.ravel()).reshape(inner_pts.shape) * inner_wts, axis=1).reshape(pts.shape)
    G = tails[1:-1, None] - partial
    total = math.fsum((G**q_exp * wts).ravel())
    # first cell [0, eps]: G(s) ~ G(eps) (s/eps)^{beta+1}
    _, beta = _sobolev_kernel(params, p_exp)
    expo = q_exp * min(beta + 1.0, 0.0)
    total += nodes[1] * tails[1] ** q_exp / (1.0 + expo)
    return total ** (1.0 / q_exp)


def _fv_operator(params: ModelParams, r_v: float, n: int):
    dx = r_v / n
    x = np.arange(n + 1) * dx
    mids = (np.arange(n) + 0.5) * dx
    flux = eval_h(params, mids) / dx
    diag = flux.copy()
    diag[1:] += flux[:-1]
    off = -flux[:-1]
    lo = np.clip(x[:n] - 0.5 * dx, 0.0, None)
    hi = np.minimum(x[:n] + 0.5 * dx, r_v)
    mass = eval_H(params, hi) - eval_H(params, lo)
    return diag, off, mass


def _fv_first_eigenvalue(params: ModelParams, r_v: float, n: int, tol: float = 1e-12) -> float:
    diag, off, mass = _fv_operator(params, r_v, n)
    ab = np.zeros((2, n))
    ab[0, 1:] = off
    ab[1] = diag
    chol = linalg.cholesky_banded(ab)
    x = np.ones(n)
    lam = math.inf
    cap = 100 + n // 4
    for _ in range(cap):
        y = linalg.cho_solve_banded((chol, False), mass * x)
        y /= math.sqrt(np.dot(y * mass, y))
        Ay = diag * y
        Ay[:-1] += off * y[1:]
        Ay[1:] += off * y[:-1]
        new = float(np.dot(y, Ay))
        x = y
        if abs(new - lam) <= tol * new:
            return new
        lam = new
    raise EigenConvergenceError(f"inverse iteration did not settle in {cap} steps (last {lam})")


def model_first_eigenvalue(params: ModelParams, v: float, n_grid: int = 2048) -> float:
    """First Dirichlet eigenvalue ``lambda_{K,N,v}`` of the model interval.

    Finite-volume discretization with midpoint fluxes and exact cell masses,
    inverse iteration on the tridiagonal pencil, one Richardson step between
    ``n_grid`` and ``2 n_grid`` cells.
    """
    if not 0 < v < 1:
        raise ValueError("v must lie in (0, 1)")
    r_v = float(inv_H(params, v))
    coarse = _fv_first_eigenvalue(params, r_v, n_grid)
    fine = _fv_first_eigenvalue(params, r_v, 2 * n_grid)
    return (4.0 * fine - coarse) / 3.0


__all__ = [
    "ModelSolution",
    "ModelQuadratureError",
    "EigenConvergenceError",
    "constant_sharp",
    "solve_model_poisson",
    "weak_form_residual",
    "model_gradient_lq_norm",
    "integral_of_w",
    "torsional_rigidity_model",
    "sobolev_c1",
    "sobolev_c2",
    "model_first_eigenvalue",
    "model_constants",
]
