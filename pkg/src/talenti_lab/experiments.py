"""Acceptance experiments at a named resolution tier.

Every ``criterion_k(tier)`` returns a JSON-ready dict with the measured
quantities, the tolerances they were judged against and an overall ``pass``.
Nothing time-dependent goes into the dicts, so the output of a tier is a pure
function of the code and the fixed seeds below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .brownian import CapUnion, SphericalCap, average_exit_time, simulate_exit_time
from .comparison import (
    faber_krahn_check,
    mesh_tolerance,
    sobolev_check,
    talenti_check,
    torsion_check,
)
from .fem import CoefficientField, assemble_full
from .mesh import cap_domain, generate_icosphere, two_cap_domain
from .model_solver import (
    constant_sharp,
    model_first_eigenvalue,
    solve_model_poisson,
    sobolev_c1,
    torsional_rigidity_model,
    weak_form_residual,
)
from .model_space import ModelParams, eval_H, iso_profile
from .rearrangement import (
    WeightedFunction,
    decreasing_rearrangement,
    distribution_function,
    lp_distance,
    lp_norm,
)

LN2 = math.log(2.0)
SEED = 20240611


@dataclass(frozen=True)
class Tier:
    name: str
    levels: tuple  # (coarse, fine) icosphere subdivisions for the mesh criteria
    torsion_two_cap_level: int
    n_rearrange: int
    n_pairs: int
    n_fields: int
    field_level: int
    bm_dt: float
    bm_n: int
    avg_dt: float
    avg_points: int
    avg_walkers: int


TIERS = {
    "coarse": Tier("coarse", (3, 4), 7, 100, 20, 10, 2, 1e-3, 4000, 2.5e-4, 200, 100),
    "standard": Tier("standard", (4, 5), 7, 1000, 200, 50, 3, 1e-4, 100_000, 1e-4, 200, 200),
}

_cache: dict = {}


def _mesh(s):
    key = ("mesh", s)
    if key not in _cache:
        _cache[key] = generate_icosphere(s)
    return _cache[key]


def _hemisphere(s):
    return cap_domain(_mesh(s), (0.0, 0.0, 1.0), 0.5)


def _random_f(mesh, seed):
    return 2.0 * np.random.default_rng(seed).random(mesh.n_vertices)


def _report_entry(rep):
    d = rep.to_dict()
    d["eps_mesh"] = rep.eps_mesh
    return d


def criterion_1(tier: Tier) -> dict:
    p = ModelParams(1.0, 2.0)
    v = (np.arange(100) + 0.5) / 100
    iso_err = float(np.max(np.abs(iso_profile(p, v) - np.sqrt(v * (1 - v)))))
    t = np.linspace(0.0, math.pi, 100)
    H_err = float(np.max(np.abs(eval_H(p, t) - 0.5 * (1 - np.cos(t)))))
    ok = iso_err <= 1e-10 and H_err <= 1e-12
    return {"pass": ok, "iso_profile_max_err": iso_err, "H_max_err": H_err, "tol": {"iso": 1e-10, "H": 1e-12}}


def _bump(c, a):
    def phi(r):
        x = (np.asarray(r) - c) / a
        return np.where(np.abs(x) < 1, (1 - x**2) ** 3, 0.0)

    def dphi(r):
        x = (np.asarray(r) - c) / a
        return np.where(np.abs(x) < 1, -6 * x * (1 - x**2) ** 2 / a, 0.0)

    return phi, dphi


def criterion_2(tier: Tier) -> dict:
    p = ModelParams(1.0, 2.0)
    sol = solve_model_poisson(p, constant_sharp(2.0, 0.5), 0.5, 1.0, 2048)
    rng = np.random.default_rng(SEED)
    residuals = []
    for _ in range(20):
        c = rng.uniform(0.05, 0.95) * sol.r_v
        a = rng.uniform(0.05, 1.0) * (sol.r_v - c)
        residuals.append(weak_form_residual(sol, *_bump(c, a)))
    w0_err = abs(float(sol.w[0]) - 2 * LN2)
    ok = w0_err <= 1e-8 and sol.route_gap <= 1e-10 and max(residuals) <= 1e-6
    return {
        "pass": ok,
        "w0_err": w0_err,
        "route_gap": sol.route_gap,
        "n_nodes": int(sol.grid.size),
        "max_weak_residual": float(max(residuals)),
        "tol": {"w0": 1e-8, "routes": 1e-10, "weak": 1e-6},
    }


def _random_cells(rng, n):
    vals = rng.normal(size=n) * rng.uniform(0.1, 10)
    wts = rng.uniform(0.01, 1.0, size=n)
    return WeightedFunction(vals, wts * (rng.uniform(0.1, 1.0) / wts.sum()))


def criterion_3(tier: Tier) -> dict:
    rng = np.random.default_rng(SEED + 3)
    eq_fail = lp_fail = 0
    for _ in range(tier.n_rearrange):
        u = _random_cells(rng, int(rng.integers(1, 65)))
        s = decreasing_rearrangement(u)
        ts = np.concatenate([np.abs(u.values), rng.uniform(0, np.abs(u.values).max() * 1.1, 8), [0.0]])
        if any(distribution_function(u, t) != s.superlevel_measure(t) for t in ts):
            eq_fail += 1
        if any(lp_norm(u, q) != lp_norm(s, q) for q in (1.0, 2.0, 3.5, math.inf)):
            lp_fail += 1
    con_fail = 0
    worst = -math.inf
    for _ in range(tier.n_pairs):
        n = int(rng.integers(1, 65))
        u = _random_cells(rng, n)
        w2 = WeightedFunction(rng.normal(size=n) * 3, u.weights)
        su, sw = decreasing_rearrangement(u), decreasing_rearrangement(w2)
        diff = WeightedFunction(np.abs(u.values) - np.abs(w2.values), u.weights)
        for q in (1.0, 2.0, math.inf):
            lhs, rhs = lp_distance(su, sw, q), lp_norm(diff, q)
            worst = max(worst, lhs - rhs)
            if lhs > rhs * (1 + 1e-12) + 1e-15:
                con_fail += 1
    ok = eq_fail == 0 and lp_fail == 0 and con_fail == 0
    return {
        "pass": ok,
        "n_functions": tier.n_rearrange,
        "n_pairs": tier.n_pairs,
        "equimeasurability_failures": eq_fail,
        "lp_failures": lp_fail,
        "contraction_failures": con_fail,
        "worst_contraction_excess": worst,
    }


def _talenti_runs(tier: Tier):
    key = ("talenti", tier.name)
    if key in _cache:
        return _cache[key]
    runs = {}
    for s in tier.levels:
        m = _mesh(s)
        runs[f"hemisphere_s{s}"] = talenti_check(_hemisphere(s), None, 2.0)
        two = two_cap_domain(m)
        runs[f"two_cap_const_s{s}"] = talenti_check(two, None, 2.0)
        runs[f"two_cap_random_s{s}"] = talenti_check(two, None, _random_f(m, SEED + s))
    _cache[key] = runs
    return runs


def criterion_4(tier: Tier) -> dict:
    runs = _talenti_runs(tier)
    lo, hi = tier.levels
    a, b = runs[f"hemisphere_s{lo}"], runs[f"hemisphere_s{hi}"]
    sup_lo = a.checks["pointwise"]["sup_abs_gap"]
    sup_hi = b.checks["pointwise"]["sup_abs_gap"]
    w_inf = float(np.max(b.curve[2]))
    ratio = sup_lo / sup_hi
    ok = sup_hi <= 0.05 * w_inf and ratio >= 1.5
    return {
        "pass": ok,
        "v": b.v,
        "sup_gap": {str(lo): sup_lo, str(hi): sup_hi},
        "w_inf": w_inf,
        "relative_sup_gap": sup_hi / w_inf,
        "refinement_ratio": ratio,
        "tol": {"relative_sup_gap": 0.05, "refinement_ratio": 1.5},
    }


def criterion_5(tier: Tier) -> dict:
    runs = _talenti_runs(tier)
    out = {}
    ok = True
    for name, rep in runs.items():
        if not name.startswith("two_cap"):
            continue
        eps = rep.eps_mesh
        grads = {str(q): m for q, m in rep.gradient_margins.items()}
        this = rep.pointwise_margin >= -eps and all(m >= -eps for m in grads.values())
        center_gap = float(rep.curve[2][0] - rep.curve[1][0])
        out[name] = {
            "pass": this,
            "pointwise_margin": rep.pointwise_margin,
            "center_gap": center_gap,
            "gradient_margins": grads,
            "eps_mesh": eps,
        }
        ok &= this
    return {"pass": ok, "runs": out}


def criterion_6(tier: Tier) -> dict:
    runs = _talenti_runs(tier)
    out = {n: {"violation": r.monotonicity_violation, "eps_mesh": r.eps_mesh} for n, r in runs.items()}
    ok = all(r.monotonicity_violation <= r.eps_mesh for r in runs.values())
    return {"pass": ok, "runs": out}


def criterion_7(tier: Tier) -> dict:
    p = ModelParams(1.0, 2.0)
    T_half = torsional_rigidity_model(p, 0.5)
    model_err = abs(T_half - (2 * LN2 - 1))
    hemi = {s: torsion_check(_hemisphere(s)).torsion for s in tier.levels}
    lo, hi = tier.levels
    rel_hi = abs(hemi[hi]["rel_gap"])
    converging = abs(hemi[hi]["rel_gap"]) < abs(hemi[lo]["rel_gap"])
    two = two_cap_domain(_mesh(tier.torsion_two_cap_level))
    two_rep = torsion_check(two)
    eps = two_rep.eps_mesh
    ok = model_err <= 1e-8 and rel_hi <= 0.03 and converging and two_rep.torsion["margin"] > eps
    return {
        "pass": ok,
        "model_T_half_err": model_err,
        "hemisphere": {str(s): d for s, d in hemi.items()},
        "hemisphere_rel_gap_fine": rel_hi,
        "converging": converging,
        "two_cap": {"level": tier.torsion_two_cap_level, **two_rep.torsion, "eps_mesh": eps},
        "tol": {"model": 1e-8, "hemisphere_rel": 0.03},
    }


def criterion_8(tier: Tier) -> dict:
    p = ModelParams(1.0, 2.0)
    lam_model = model_first_eigenvalue(p, 0.5)
    lo, hi = tier.levels
    hemi = {s: faber_krahn_check(_hemisphere(s)).faber_krahn for s in tier.levels}
    rel_hi = abs(hemi[hi]["rel_gap"])
    two_rep = faber_krahn_check(two_cap_domain(_mesh(hi)))
    eps = two_rep.eps_mesh
    ok = abs(lam_model - 2.0) <= 1e-3 and rel_hi <= 0.02 and two_rep.faber_krahn["margin"] > eps
    return {
        "pass": ok,
        "model_lambda_half": lam_model,
        "hemisphere": {str(s): d for s, d in hemi.items()},
        "hemisphere_rel_gap_fine": rel_hi,
        "two_cap": {"level": hi, **two_rep.faber_krahn, "eps_mesh": eps},
        "tol": {"model": 1e-3, "hemisphere_rel": 0.02},
    }


def _sobolev_instances(tier: Tier):
    lo, hi = tier.levels
    for s in tier.levels:
        m = _mesh(s)
        yield f"hemisphere_s{s}", _hemisphere(s), None, 2.0
        yield f"two_cap_const_s{s}", two_cap_domain(m), None, 2.0
        yield f"two_cap_random_s{s}", two_cap_domain(m), None, _random_f(m, SEED + s)
    m = _mesh(lo)
    coeff = CoefficientField.random(m.n_triangles, 0.5, 2.0, np.random.default_rng(SEED + 11))
    yield f"two_cap_aniso_s{lo}", two_cap_domain(m), coeff, _random_f(m, SEED + 12)


def criterion_9(tier: Tier) -> dict:
    p = ModelParams(1.0, 2.0)
    c1_err = {str(v): abs(sobolev_c1(p, v, math.inf) + math.log1p(-v)) for v in (0.25, 0.5, 0.9)}
    inst = {}
    ok = max(c1_err.values()) <= 1e-10
    for name, dom, coeff, f in _sobolev_instances(tier):
        for pe in (math.inf, 4.0):
            rep = sobolev_check(dom, coeff, f, pe)
            e = rep.sobolev[0]
            strict = e["attained"] <= e["bound"] * (1 + 1e-12)
            inst[f"{name}_p{pe:g}"] = {"bound": e["bound"], "attained": e["attained"], "pass": strict}
            ok &= strict
    hi = tier.levels[1]
    eq = sobolev_check(_hemisphere(hi), None, 2.0, math.inf).sobolev[0]
    eps = mesh_tolerance(_hemisphere(hi))
    eq_gap = eq["bound"] - eq["attained"]
    ok &= 0 <= eq_gap <= eps
    return {
        "pass": bool(ok),
        "c1_err": c1_err,
        "instances": inst,
        "equality_case": {"bound": eq["bound"], "attained": eq["attained"], "gap": eq_gap, "eps_mesh": eps},
        "tol": {"c1": 1e-10},
    }


def criterion_10(tier: Tier, workers: int | None = 4) -> dict:
    hemi = SphericalCap.from_mass((0.0, 0.0, 1.0), 0.5)
    est = simulate_exit_time(hemi, (0.0, 0.0, 1.0), tier.bm_dt, tier.bm_n, SEED, workers=workers)
    dev = abs(est.mean - 2 * LN2)
    allow = 3 * est.stderr + 0.02
    caps = CapUnion((SphericalCap.from_mass((0, 0, 1), 0.15), SphericalCap.from_mass((0, 0, -1), 0.15)))
    avg = average_exit_time(caps, tier.avg_dt, tier.avg_walkers, tier.avg_points, SEED + 10, workers=workers)
    ok = dev <= allow and avg.strict
    return {
        "pass": ok,
        "hemisphere": {**est.to_dict(), "deviation": dev, "allowance": allow},
        "two_cap_average": avg.to_dict(),
    }


def criterion_11(tier: Tier) -> dict:
    rng = np.random.default_rng(SEED + 21)
    m = _mesh(tier.field_level)
    K_id = assemble_full(m)
    worst = 0.0
    fails = 0
    for _ in range(tier.n_fields):
        a = float(rng.uniform(0.1, 1.0))
        b = float(rng.uniform(1.0, 4.0))
        coeff = CoefficientField.random(m.n_triangles, a, b, rng)
        K_h = assemble_full(m, coeff)
        for _ in range(5):
            x = rng.normal(size=m.n_vertices)
            e_id = float(x @ (K_id @ x))
            e_h = float(x @ (K_h @ x))
            slack = 1e-12 * e_id
            lo_ex, hi_ex = a * e_id - e_h, e_h - b * e_id
            worst = max(worst, lo_ex / e_id, hi_ex / e_id)
            if lo_ex > slack or hi_ex > slack:
                fails += 1
    runs = {}
    ok = fails == 0
    for s in tier.levels:
        mm = _mesh(s)
        coeff = CoefficientField.random(mm.n_triangles, 0.5, 2.0, np.random.default_rng(SEED + 22))
        rep = talenti_check(two_cap_domain(mm), coeff, _random_f(mm, SEED + 23))
        eps = rep.eps_mesh
        this = rep.pointwise_margin >= -eps and all(g >= -eps for g in rep.gradient_margins.values())
        runs[f"two_cap_aniso_s{s}"] = {
            "pass": this,
            "alpha": rep.alpha,
            "pointwise_margin": rep.pointwise_margin,
            "gradient_margins": {str(q): g for q, g in rep.gradient_margins.items()},
            "eps_mesh": eps,
        }
        ok &= this
    return {
        "pass": ok,
        "n_fields": tier.n_fields,
        "sandwich_failures": fails,
        "worst_relative_excess": worst,
        "anisotropic_talenti": runs,
    }


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
}


def talenti_curves(tier: Tier) -> dict:
    """``name -> rho,u_star,w`` CSV text for every Talenti run of the tier."""
    return {name: rep.curve_csv() for name, rep in _talenti_runs(tier).items()}


def talenti_reports(tier: Tier) -> dict:
    return {name: _report_entry(rep) for name, rep in _talenti_runs(tier).items()}
