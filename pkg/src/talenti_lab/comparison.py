"""Domain-versus-model comparisons with quantified margins.

Each check solves on the mesh domain, symmetrizes, solves the matching model
problem and records a margin together with the tolerance it was judged
against.  The mesh tolerance is ``eps_mesh = c_tol * max_edge_length``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fem import (
    CoefficientField,
    _as_vertex_array,
    first_eigen,
    lq_gradient_norm,
    solve_poisson,
)
from .mesh import DomainSpec
from .model_space import ModelParams, eval_H
from .model_solver import (
    ModelSolution,
    model_first_eigenvalue,
    model_gradient_lq_norm,
    sobolev_c1,
    sobolev_c2,
    solve_model_poisson,
    torsional_rigidity_model,
)
from .rearrangement import (
    SchwarzSymmetrization,
    decreasing_rearrangement,
    lp_norm,
    schwarz_symmetrize,
)

C_TOL = 5.0
MASS_CONSISTENCY_TOL = 1e-10
REPORT_KEYS = (
    "v",
    "alpha",
    "pointwise_margin",
    "gradient_margins",
    "monotonicity_violation",
    "torsion",
    "faber_krahn",
    "sobolev",
    "mesh_h",
    "pass",
)


class MassConsistencyError(ValueError):
    pass


def sphere_params(dom_or_mesh) -> ModelParams:
    """Model parameters matching a round 2-sphere mesh: ``K = 1/R^2``, ``N = 2``."""
    mesh = getattr(dom_or_mesh, "mesh", dom_or_mesh)
    return ModelParams(1.0 / mesh.radius**2, 2.0)


def mesh_tolerance(dom: DomainSpec, c_tol: float = C_TOL) -> float:
    return c_tol * dom.mesh.max_edge_length


def _check(margin: float, tol: float, **extra) -> dict:
    return {"pass": bool(margin >= -tol), "margin": float(margin), "tol": float(tol), **extra}


@dataclass
class ComparisonReport:
    v: float
    alpha: float
    mesh_h: float
    eps_mesh: float
    pointwise_margin: float | None = None
    gradient_margins: dict = field(default_factory=dict)
    monotonicity_violation: float | None = None
    torsion: dict | None = None
    faber_krahn: dict | None = None
    sobolev: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    curve: tuple | None = None  # (rho, u_star, w), dumped as CSV

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "v": self.v,
            "alpha": self.alpha,
            "pointwise_margin": self.pointwise_margin,
            "gradient_margins": {str(k): v for k, v in self.gradient_margins.items()},
            "monotonicity_violation": self.monotonicity_violation,
            "torsion": self.torsion,
            "faber_krahn": self.faber_krahn,
            "sobolev": self.sobolev,
            "mesh_h": self.mesh_h,
            "pass": dict(self.checks),
        }

    def to_json(self) -> str:
        # repr-precision floats round-trip exactly
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, allow_nan=True) + "\n"

    def curve_csv(self) -> str:
        if self.curve is None:
            raise ValueError("report carries no curve")
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["rho", "u_star", "w"])
        for r, a, b in zip(*self.curve):
            wr.writerow([repr(float(r)), repr(float(a)), repr(float(b))])
        return buf.getvalue()

    def merge(self, other: "ComparisonReport") -> "ComparisonReport":
        """Fold the filled-in parts of ``other`` into this report."""
        for name in ("pointwise_margin", "monotonicity_violation", "torsion", "faber_krahn", "curve"):
            val = getattr(other, name)
            if val is not None:
                setattr(self, name, val)
        self.gradient_margins.update(other.gradient_margins)
        self.sobolev.extend(other.sobolev)
        self.checks.update(other.checks)
        return self


def empty_report(dom: DomainSpec, alpha: float = 1.0, c_tol: float = C_TOL) -> ComparisonReport:
    return ComparisonReport(dom.v, float(alpha), dom.mesh.max_edge_length, mesh_tolerance(dom, c_tol))


@dataclass
class TalentiPipeline:
    """Intermediate objects of one Talenti comparison run."""

    dom: DomainSpec
    params: ModelParams
    alpha: float
    u: np.ndarray
    f: np.ndarray
    u_star: SchwarzSymmetrization
    model: ModelSolution


def run_pipeline(
    dom: DomainSpec,
    coeff: CoefficientField | None,
    f,
    n_grid: int = 2048,
    params: ModelParams | None = None,
    K=None,
) -> TalentiPipeline:
    """Solve ``-L u = f`` on the domain and ``-alpha Delta w = f_star`` on the model."""
    params = sphere_params(dom) if params is None else params
    alpha = 1.0 if coeff is None else float(coeff.alpha)
    fv = _as_vertex_array(dom, f)
    if not np.all(np.isfinite(fv)):
        raise ValueError("f must be finite")
    sol = solve_poisson(dom, coeff, fv, K=K)
    uw = dom.weighted(sol.u)
    gap = abs(dom.v - uw.total_mass)
    if gap > MASS_CONSISTENCY_TOL:
        raise MassConsistencyError(f"cell weights sum to {uw.total_mass}, domain measure is {dom.v}")
    u_star = schwarz_symmetrize(uw, params)
    f_sharp = decreasing_rearrangement(dom.weighted(fv))
    model = solve_model_poisson(params, f_sharp, f_sharp.total_mass, alpha, n_grid)
    return TalentiPipeline(dom, params, alpha, sol.u, fv, u_star, model)


def monotonicity_check(u_star, w) -> float:
    """Largest increase of ``w - u_star`` between consecutive grid nodes (0 if none)."""
    d = np.asarray(w, float) - np.asarray(u_star, float)
    if d.size < 2:
        return 0.0
    return float(max(0.0, np.max(np.diff(d))))


def intermediate_margin(pipe: TalentiPipeline) -> float:
    """``min_s`` of ``(1/alpha) int_s^v F/I^2 - u_sharp(s)`` over the step right ends.

    The tail is non-increasing and ``u_sharp`` is constant on each step, so the
    right end of every step is where the bound is tightest.
    """
    sharp = pipe.u_star.sharp
    right = np.minimum(sharp.breakpoints[1:], pipe.model.v)
    tails = pipe.model.tail_from_mass(right)
    return float(np.min(tails - sharp.values))


def talenti_check(
    dom: DomainSpec,
    coeff: CoefficientField | None,
    f,
    n_grid: int = 2048,
    q_list=(1.0, 1.5, 2.0),
    c_tol: float = C_TOL,
    params: ModelParams | None = None,
) -> ComparisonReport:
    """Pointwise, intermediate, gradient and monotonicity checks for one solve."""
    pipe = run_pipeline(dom, coeff, f, n_grid, params)
    rep = empty_report(dom, pipe.alpha, c_tol)
    eps = rep.eps_mesh
    grid = pipe.model.grid
    us = pipe.u_star(grid)
    w = pipe.model.w
    gap = w - us
    rep.pointwise_margin = float(np.min(gap))
    rep.checks["pointwise"] = _check(rep.pointwise_margin, eps, sup_abs_gap=float(np.max(np.abs(gap))))
    rep.checks["intermediate"] = _check(intermediate_margin(pipe), eps)
    rep.monotonicity_violation = monotonicity_check(us, w)
    rep.checks["monotonicity"] = _check(-rep.monotonicity_violation, eps)
    for q in q_list:
        dom_val = lq_gradient_norm(dom, pipe.u, q)
        mod_val = model_gradient_lq_norm(pipe.model, q)
        margin = mod_val - dom_val
        rep.gradient_margins[float(q)] = margin
        rep.checks[f"gradient_q{float(q):g}"] = _check(margin, eps, domain=dom_val, model=mod_val)
    rep.curve = (grid, us, w)
    return rep


def gradient_check(dom, coeff, f, q_list=(1.0, 1.5, 2.0), n_grid: int = 2048, c_tol: float = C_TOL) -> dict:
    """``q -> model - domain`` for the ``L^q`` gradient integrals."""
    return talenti_check(dom, coeff, f, n_grid, q_list, c_tol).gradient_margins


def _identity_only(coeff):
    if coeff is not None and not (
        coeff.alpha == coeff.beta == 1.0 and np.all(coeff.tensors == np.eye(2))
    ):
        raise ValueError("this check is stated for the Laplacian (identity coefficients)")


def torsion_check(dom: DomainSpec, c_tol: float = C_TOL, n_grid: int = 2048, coeff=None) -> ComparisonReport:
    """Torsional rigidity ``int u`` with ``-Delta u = 2`` against the model ball of equal mass."""
    _identity_only(coeff)
    params = sphere_params(dom)
    rep = empty_report(dom, 1.0, c_tol)
    u = solve_poisson(dom, None, 2.0).u
    T_dom = math.fsum(u * dom.mesh.vertex_measure)
    T_mod = torsional_rigidity_model(params, dom.v, n_grid)
    margin = T_mod - T_dom
    rep.torsion = {"T_domain": T_dom, "T_model": T_mod, "margin": margin, "rel_gap": margin / T_mod}
    rep.checks["torsion"] = _check(margin, rep.eps_mesh)
    return rep


def faber_krahn_check(dom: DomainSpec, c_tol: float = C_TOL, n_grid: int = 2048, coeff=None) -> ComparisonReport:
    _identity_only(coeff)
    params = sphere_params(dom)
    rep = empty_report(dom, 1.0, c_tol)
    lam, _ = first_eigen(dom)
    lam_mod = model_first_eigenvalue(params, dom.v, n_grid)
    margin = lam - lam_mod
    rep.faber_krahn = {"lambda_domain": lam, "lambda_model": lam_mod, "margin": margin, "rel_gap": margin / lam_mod}
    rep.checks["faber_krahn"] = _check(margin, rep.eps_mesh)
    return rep


def sobolev_check(
    dom: DomainSpec,
    coeff: CoefficientField | None,
    f,
    p_exp: float,
    q_exp: float = math.inf,
    c_tol: float = C_TOL,
) -> ComparisonReport:
    """``||u||_inf <= (c1/alpha) ||f||_p`` (``q = inf``) or ``||u||_q <= (c2/alpha) ||f||_p``."""
    params = sphere_params(dom)
    alpha = 1.0 if coeff is None else float(coeff.alpha)
    rep = empty_report(dom, alpha, c_tol)
    fv = _as_vertex_array(dom, f)
    u = solve_poisson(dom, coeff, fv).u
    f_norm = lp_norm(dom.weighted(fv), p_exp)
    uw = dom.weighted(u)
    if math.isinf(q_exp):
        const = sobolev_c1(params, dom.v, p_exp)
        attained = lp_norm(uw, math.inf)
    else:
        const = sobolev_c2(params, dom.v, p_exp, q_exp)
        attained = lp_norm(uw, q_exp)
    bound = const * f_norm / alpha
    ok = attained <= bound * (1.0 + rep.eps_mesh)
    entry = {"p": p_exp, "q": q_exp, "constant": const, "bound": bound, "attained": attained, "pass": bool(ok)}
    rep.sobolev.append(entry)
    name = f"sobolev_p{p_exp:g}_q{q_exp:g}"
    rep.checks[name] = {
        "pass": bool(ok),
        "margin": float(bound - attained),
        "tol": float(bound * rep.eps_mesh),
        "rel_gap": float((bound - attained) / bound) if bound > 0 else 0.0,
    }
    return rep


def _mollified_star(u_star: SchwarzSymmetrization, n_cells: int, sub: int = 16):
    """Hat-kernel mollification (half-width one cell) of ``u_star`` on a uniform radial grid."""
    r_v = u_star.r_v
    dx = r_v / n_cells
    fine = (np.arange(-sub, n_cells * sub + sub + 1)) * (dx / sub)
    # even extension through 0, zero beyond r_v
    vals = np.where(fine > r_v, 0.0, u_star(np.abs(fine)))
    k = 1.0 - np.abs(np.arange(-sub, sub + 1)) / sub
    k /= k.sum()
    smooth = np.convolve(vals, k, mode="same")
    nodes = np.arange(n_cells + 1) * dx
    return nodes, smooth[sub : sub + n_cells * sub + 1 : sub], 2 * dx


def polya_szego_check(
    dom: DomainSpec, u, p_exp: float, n_cells: int | None = None, c_tol: float = C_TOL, jump_ratio: float = 0.1
) -> ComparisonReport:
    """``int |grad u_star|^p dm_{K,N} <= int |grad u|^p dm`` with a mollified ``u_star``.

    By default the radial grid spacing is the mesh edge length, so the hat
    kernel spans the O(h) step the lumped boundary ring leaves in ``u_star``.
    """
    if not p_exp > 1:
        raise ValueError("p must exceed 1")
    params = sphere_params(dom)
    u = np.asarray(u, float)
    if np.any(u[~dom.inside] != 0):
        raise ValueError("u must vanish outside the domain")
    rep = empty_report(dom, 1.0, c_tol)
    star = schwarz_symmetrize(dom.weighted(u), params)
    vals = star.sharp.values
    top = float(vals[0]) if vals.size else 0.0
    if vals.size > 1 and top > 0 and np.max(-np.diff(vals)) > jump_ratio * top:
        warnings.warn("u_star has large jumps; comparing the mollified profile only", RuntimeWarning, stacklevel=2)
    if n_cells is None:
        n_cells = max(8, math.ceil(star.r_v / dom.mesh.max_edge_length))
    nodes, sm, width = _mollified_star(star, n_cells)
    grad = np.diff(sm) / np.diff(nodes)
    cell_mass = np.diff(eval_H(params, nodes))
    lhs = math.fsum(np.abs(grad) ** p_exp * cell_mass)
    rhs = lq_gradient_norm(dom, u, p_exp)
    ok = lhs <= rhs * (1.0 + rep.eps_mesh)
    rep.checks[f"polya_szego_p{p_exp:g}"] = {
        "pass": bool(ok),
        "margin": float(rhs - lhs),
        "tol": float(rhs * rep.eps_mesh),
        "lhs": lhs,
        "rhs": rhs,
        "mollifier_width": width,
    }
    return rep


def full_report(
    dom: DomainSpec,
    coeff: CoefficientField | None,
    f,
    n_grid: int = 2048,
    q_list=(1.0, 1.5, 2.0),
    c_tol: float = C_TOL,
    sobolev_p=(math.inf,),
) -> ComparisonReport:
    """Talenti, torsion, Faber-Krahn and Sobolev checks in one report.

    Torsion and Faber-Krahn are only run for identity coefficients.
    """
    rep = talenti_check(dom, coeff, f, n_grid, q_list, c_tol)
    try:
        _identity_only(coeff)
        rep.merge(torsion_check(dom, c_tol, n_grid))
        rep.merge(faber_krahn_check(dom, c_tol, n_grid))
    except ValueError:
        pass
    for p in sobolev_p:
        rep.merge(sobolev_check(dom, coeff, f, p, math.inf, c_tol))
    return rep
