"""Command-line front end.

Exit codes: 0 success, 1 a comparison check failed, 2 usage or input error,
3 numerical failure (solver or quadrature did not converge).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .brownian import CapUnion, SphericalCap, average_exit_time, simulate_exit_time
from .comparison import (
    C_TOL,
    faber_krahn_check,
    sobolev_check,
    talenti_check,
    torsion_check,
)
from .fem import CoefficientField, SolverConvergenceError
from .mesh import DomainSpec, MeshError, cap_domain, caps_domain, generate_icosphere, geodesic_distance
from .model_solver import (
    EigenConvergenceError,
    ModelQuadratureError,
    constant_sharp,
    model_first_eigenvalue,
    solve_model_poisson,
    sobolev_c1,
    sobolev_c2,
    torsional_rigidity_model,
)
from .model_space import ModelDomainError, ModelParams, eval_H, inv_H, iso_profile, model_constants
from .rearrangement import decreasing_rearrangement

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
RADIAL_CATALOG = {
    # functions of the geodesic distance d (unit sphere) to the domain centre
    "cosdist": lambda d: 1.0 + np.cos(d),
    "bump": lambda d: np.clip(1.0 - (2.0 * d / math.pi) ** 2, 0.0, None),
    "linear": lambda d: np.clip(2.0 * (1.0 - d / math.pi), 0.0, None),
}


class UsageError(Exception):
    pass


# parsing ------------------------------------------------------------------


def _vec3(text: str):
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from exc
    if len(parts) != 3 or not np.any(parts):
        raise argparse.ArgumentTypeError(f"expected a nonzero x,y,z, got {text!r}")
    return np.array(parts)


def _add_model(p, v=True, alpha=True):
    p.add_argument("--K", type=float, required=True, help="curvature lower bound K > 0")
    p.add_argument("--N", type=float, required=True, help="dimension bound N > 1")
    if v:
        p.add_argument("--v", type=float, help="domain measure in (0, 1)")
    if alpha:
        p.add_argument("--alpha", type=float, default=1.0, help="ellipticity constant (default 1)")


def _add_mesh(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--icosphere", type=int, metavar="S", help="icosphere subdivision level")
    g.add_argument("--mesh", type=Path, help="OFF mesh file")
    p.add_argument(
        "--domain",
        default="cap:0.5",
        help="cap:MASS | capr:RADIUS | twocap:MASS | mask:PATH (default cap:0.5)",
    )
    p.add_argument("--center", type=_vec3, default=None, help="cap centre x,y,z (default north pole)")
    p.add_argument("--coeff", type=Path, help="coefficient CSV triangle_index,a11,a12,a22")
    p.add_argument("--aniso", help="random coefficients ALPHA,BETA,SEED")


def _add_f(p, default="const:2"):
    p.add_argument("--f", default=default, help="const:C | radial:cosdist|bump|linear | csv:PATH")


def _add_common(p):
    p.add_argument("--config", type=Path, help="file of 'key = value' lines; flags override it")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--c-tol", type=float, default=C_TOL, help="eps_mesh = c_tol * max edge length")
    p.add_argument("--n-grid", type=int, default=2048, help="model grid size")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="talenti-lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="model-space quantities")
    _add_model(p, alpha=False)
    _add_common(p)

    p = sub.add_parser("rearrange", help="decreasing rearrangement of cell data or a vertex function")
    p.add_argument("--cells", type=Path, help="CSV value,weight")
    _add_mesh(p)
    p.add_argument("--u", help="function on the mesh (same syntax as --f)")
    p.add_argument("--K", type=float, default=None)
    p.add_argument("--N", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("solve-model", help="solve the model Poisson problem")
    _add_model(p)
    p.add_argument("--f", default="const:2", help="const:C or csv:PATH with breakpoint,value")
    _add_common(p)

    for name, helptext in (
        ("talenti-check", "Talenti comparison on a mesh domain"),
        ("torsion", "torsional rigidity"),
        ("eigen", "first Dirichlet eigenvalue"),
        ("sobolev", "Sobolev embedding constants and check"),
    ):
        p = sub.add_parser(name, help=helptext)
        if name != "talenti-check":
            p.add_argument("--model", action="store_true", help="model side only")
        p.add_argument("--K", type=float, default=None)
        p.add_argument("--N", type=float, default=None)
        p.add_argument("--v", type=float, default=None, help="model measure (with --model)")
        _add_mesh(p)
        _add_f(p)
        if name == "talenti-check":
            p.add_argument("--q", type=float, nargs="+", default=[1.0, 1.5, 2.0], help="gradient exponents")
        if name == "sobolev":
            p.add_argument("--p", type=float, default=math.inf, help="exponent of f (inf allowed)")
            p.add_argument("--q", type=float, default=math.inf, help="exponent of u (inf: sup bound)")
        _add_common(p)

    p = sub.add_parser("brownian", help="Monte-Carlo exit times")
    _add_mesh(p)
    p.add_argument("--start", type=_vec3, default=None, help="start point x,y,z (default the cap centre)")
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--n", type=int, default=10_000, help="walkers (per start point with --average)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--average", type=int, default=0, metavar="POINTS", help="average exit time over POINTS starts")
    p.add_argument("--analytic", action="store_true", help="use exact caps instead of the mesh (cap domains only)")
    p.add_argument("--K", type=float, default=None)
    p.add_argument("--N", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("reproduce", help="run the acceptance experiments at a tier")
    p.add_argument("--tier", choices=("coarse", "standard"), default="coarse")
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)
    return ap


def _config_tokens(path: Path, subparser: argparse.ArgumentParser) -> list:
    """Turn ``key = value`` lines into flag tokens for ``subparser``."""
    flags = {}
    for act in subparser._actions:
        for opt in act.option_strings:
            if opt.startswith("--"):
                flags[opt[2:]] = act
    tokens = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, val = (x.strip() for x in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in flags:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        act = flags[key]
        if act.nargs == 0:
            if val.lower() in ("1", "true", "yes", "on"):
                tokens.append(f"--{key}")
        elif act.nargs in ("+", "*"):
            tokens += [f"--{key}", *val.split()]
        else:
            tokens += [f"--{key}", val]
    return tokens


def parse_args(argv) -> argparse.Namespace:
    ap = build_parser()
    argv = list(argv)
    if "--config" in argv and argv and not argv[0].startswith("-"):
        i = argv.index("--config")
        if i + 1 >= len(argv):
            ap.error("--config needs a path")
        sub = ap._subparsers._group_actions[0].choices.get(argv[0])
        if sub is not None:
            extra = _config_tokens(Path(argv[i + 1]), sub)
            argv = [argv[0], *extra, *argv[1:]]
    return ap.parse_args(argv)


# helpers ------------------------------------------------------------------


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m for m in missing))


def _params(args) -> ModelParams:
    _need(args, "K", "N")
    return ModelParams(args.K, args.N)


def _mesh_from(args):
    if args.mesh is not None:
        return tio.read_off(args.mesh)
    if args.icosphere is None:
        raise UsageError("give --icosphere S or --mesh PATH")
    if args.icosphere < 0:
        raise UsageError("--icosphere must be >= 0")
    K = getattr(args, "K", None)
    N = getattr(args, "N", None)
    if N is not None and N != 2:
        raise UsageError("mesh computations are two-dimensional: use --N 2")
    R = 1.0 if K is None else 1.0 / math.sqrt(K)
    return generate_icosphere(args.icosphere, R)


def _center(args):
    return np.array([0.0, 0.0, 1.0]) if args.center is None else args.center / np.linalg.norm(args.center)


def _domain_from(args, mesh) -> DomainSpec:
    kind, _, rest = args.domain.partition(":")
    c = _center(args)
    try:
        if kind == "cap":
            return cap_domain(mesh, c, float(rest))
        if kind == "capr":
            mass = 0.5 * (1.0 - math.cos(float(rest) / mesh.radius))
            return cap_domain(mesh, c, mass)
        if kind == "twocap":
            half = 0.5 * float(rest)
            return caps_domain(mesh, [c, -c], [half, half])
        if kind == "mask":
            return DomainSpec(mesh, tio.read_mask_csv(rest, mesh.n_vertices), label=f"mask:{rest}")
    except ValueError as exc:
        raise UsageError(f"bad --domain {args.domain!r}: {exc}") from exc
    raise UsageError(f"unknown domain kind {kind!r}")


def _analytic_from(args):
    kind, _, rest = args.domain.partition(":")
    c = _center(args)
    R = 1.0 if getattr(args, "K", None) is None else 1.0 / math.sqrt(args.K)
    if kind == "cap":
        return CapUnion((SphericalCap.from_mass(c, float(rest), R),))
    if kind == "capr":
        return CapUnion((SphericalCap(tuple(c), float(rest), R),))
    if kind == "twocap":
        half = 0.5 * float(rest)
        return CapUnion((SphericalCap.from_mass(c, half, R), SphericalCap.from_mass(-c, half, R)))
    raise UsageError("--analytic needs a cap, capr or twocap domain")


def _vertex_function(spec: str, mesh, args) -> np.ndarray:
    kind, _, rest = spec.partition(":")
    if kind == "const":
        try:
            return np.full(mesh.n_vertices, float(rest))
        except ValueError as exc:
            raise UsageError(f"bad constant in {spec!r}") from exc
    if kind == "radial":
        if rest not in RADIAL_CATALOG:
            raise UsageError(f"unknown radial function {rest!r}; choose from {', '.join(RADIAL_CATALOG)}")
        d = geodesic_distance(mesh, mesh.vertices, _center(args)) / mesh.radius
        return RADIAL_CATALOG[rest](d)
    if kind == "csv":
        return tio.read_vertex_csv(rest, mesh.n_vertices)
    raise UsageError(f"unknown function spec {spec!r}")


def _coeff_from(args, mesh):
    if args.coeff is not None and args.aniso is not None:
        raise UsageError("--coeff and --aniso are exclusive")
    if args.coeff is not None:
        return tio.read_coefficients_csv(args.coeff, mesh.n_triangles)
    if args.aniso is not None:
        try:
            a, b, s = args.aniso.split(",")
            return CoefficientField.random(mesh.n_triangles, float(a), float(b), np.random.default_rng(int(s)))
        except ValueError as exc:
            raise UsageError(f"bad --aniso {args.aniso!r}: {exc}") from exc
    return None


def _emit(args, name: str, payload: dict, files: dict | None = None) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if args.out is not None:
        tio.atomic_write_text(args.out / f"{name}.json", text)
        for fname, body in (files or {}).items():
            tio.atomic_write_text(args.out / fname, body)
    else:
        sys.stdout.write(text)


def _summary(line: str) -> None:
    sys.stderr.write(line + "\n")


# commands -----------------------------------------------------------------


def cmd_model(args) -> int:
    p = _params(args)
    const = model_constants(p)
    out = {"K": p.K, "N": p.N, "D": p.D, "c": p.c, "gamma1": const.gamma1, "gamma2": const.gamma2}
    if args.v is not None:
        r = float(inv_H(p, args.v))
        out.update(v=args.v, r_v=r, H_r_v=float(eval_H(p, r)), iso_profile=float(iso_profile(p, args.v)))
    _emit(args, "model", out)
    _summary(f"model K={p.K:g} N={p.N:g}: D={p.D:.12g} c={p.c:.12g}")
    return EXIT_OK


def cmd_rearrange(args) -> int:
    if args.cells is not None:
        u = tio.read_cells_csv(args.cells)
    else:
        mesh = _mesh_from(args)
        dom = _domain_from(args, mesh)
        if args.u is None:
            raise UsageError("give --cells PATH or a mesh domain with --u SPEC")
        u = dom.weighted(_vertex_function(args.u, mesh, args))
    sharp = decreasing_rearrangement(u)
    csv_text = tio.step_function_csv(sharp)
    if args.out is not None:
        tio.atomic_write_text(args.out / "rearrangement.csv", csv_text)
    else:
        sys.stdout.write(csv_text)
    _summary(f"rearranged {u.values.size} cells into {sharp.values.size} steps, mass {sharp.total_mass:.12g}")
    return EXIT_OK


def _model_f_sharp(spec: str, v):
    kind, _, rest = spec.partition(":")
    if kind == "const":
        if v is None:
            raise UsageError("missing required option: --v")
        return constant_sharp(float(rest), v), v
    if kind == "csv":
        step = tio.read_step_function_csv(rest)
        return step, step.total_mass if v is None else v
    raise UsageError("model --f must be const:C or csv:PATH")


def cmd_solve_model(args) -> int:
    p = _params(args)
    f_sharp, v = _model_f_sharp(args.f, args.v)
    sol = solve_model_poisson(p, f_sharp, v, args.alpha, args.n_grid)
    out = {"K": p.K, "N": p.N, "v": v, "alpha": args.alpha, "r_v": sol.r_v, "w0": float(sol.w[0]), "route_gap": sol.route_gap}
    _emit(args, "solve_model", out, {"model.csv": tio.model_csv(sol.grid, sol.w, sol.w_prime)})
    if args.out is None:
        sys.stdout.write(tio.model_csv(sol.grid, sol.w, sol.w_prime))
    _summary(f"w(0) = {sol.w[0]:.12g}, route gap {sol.route_gap:.2e}")
    return EXIT_OK


def _finish(args, name, rep) -> int:
    files = {}
    if rep.curve is not None:
        files[f"{name}_curve.csv"] = rep.curve_csv()
    if args.out is not None:
        tio.atomic_write_text(args.out / f"{name}.json", rep.to_json())
        for k, body in files.items():
            tio.atomic_write_text(args.out / k, body)
    else:
        sys.stdout.write(rep.to_json())
    failed = [k for k, c in rep.checks.items() if not c["pass"]]
    _summary(f"{name}: {'PASS' if not failed else 'FAIL ' + ','.join(failed)}")
    return EXIT_OK if not failed else EXIT_CHECK


def _mesh_domain(args):
    if args.K is not None and args.N is None:
        raise UsageError("missing required option: --N")
    if args.N is not None and args.K is None:
        raise UsageError("missing required option: --K")
    mesh = _mesh_from(args)
    return mesh, _domain_from(args, mesh)


def cmd_talenti(args) -> int:
    _need(args, "K", "N")
    mesh, dom = _mesh_domain(args)
    coeff = _coeff_from(args, mesh)
    f = _vertex_function(args.f, mesh, args)
    rep = talenti_check(dom, coeff, f, args.n_grid, tuple(args.q), args.c_tol)
    return _finish(args, "talenti", rep)


def cmd_torsion(args) -> int:
    if args.model:
        p = _params(args)
        _need(args, "v")
        T = torsional_rigidity_model(p, args.v, args.n_grid)
        sys.stdout.write(f"{T!r}\n")
        if args.out is not None:
            tio.atomic_write_text(args.out / "torsion_model.json", json.dumps({"K": p.K, "N": p.N, "v": args.v, "T": T}, indent=2) + "\n")
        return EXIT_OK
    _, dom = _mesh_domain(args)
    return _finish(args, "torsion", torsion_check(dom, args.c_tol, args.n_grid))


def cmd_eigen(args) -> int:
    if args.model:
        p = _params(args)
        _need(args, "v")
        lam = model_first_eigenvalue(p, args.v, args.n_grid)
        sys.stdout.write(f"{lam!r}\n")
        if args.out is not None:
            tio.atomic_write_text(args.out / "eigen_model.json", json.dumps({"K": p.K, "N": p.N, "v": args.v, "lambda": lam}, indent=2) + "\n")
        return EXIT_OK
    _, dom = _mesh_domain(args)
    return _finish(args, "eigen", faber_krahn_check(dom, args.c_tol, args.n_grid))


def cmd_sobolev(args) -> int:
    if args.model:
        p = _params(args)
        _need(args, "v")
        if math.isinf(args.q):
            c = sobolev_c1(p, args.v, args.p)
        else:
            c = sobolev_c2(p, args.v, args.p, args.q)
        sys.stdout.write(f"{c!r}\n")
        return EXIT_OK
    mesh, dom = _mesh_domain(args)
    coeff = _coeff_from(args, mesh)
    f = _vertex_function(args.f, mesh, args)
    return _finish(args, "sobolev", sobolev_check(dom, coeff, f, args.p, args.q, args.c_tol))


def cmd_brownian(args) -> int:
    if args.analytic:
        domain = _analytic_from(args)
        start = _center(args) if args.start is None else args.start
    else:
        mesh, domain = _mesh_domain(args)
        start = _center(args) if args.start is None else args.start
    if args.average:
        res = average_exit_time(domain, args.dt, args.n, args.average, args.seed, args.workers, c_tol=args.c_tol)
        payload = res.to_dict()
        _emit(args, "average_exit_time", payload)
        _summary(f"average exit time {res.mean:.6g} +- {res.stderr:.2g}, model {res.model:.6g}: {'PASS' if res.passed else 'FAIL'}")
        return EXIT_OK if res.passed else EXIT_CHECK
    est = simulate_exit_time(domain, start, args.dt, args.n, args.seed, args.workers)
    _emit(args, "exit_time", est.to_dict())
    _summary(f"mean exit time {est.mean:.6g} +- {est.stderr:.2g} ({est.n_samples} walkers)")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from . import experiments as ex

    tier = ex.TIERS[args.tier]
    out = args.out if args.out is not None else Path(f"reproduce-{tier.name}")
    results = {}
    for k, fn in ex.CRITERIA.items():
        res = fn(tier, workers=args.workers) if k == 10 else fn(tier)
        results[str(k)] = res
        tio.atomic_write_text(out / f"criterion_{k:02d}.json", json.dumps(res, indent=2) + "\n")
        _summary(f"criterion {k:2d}: {'PASS' if res['pass'] else 'FAIL'}")
    for name, body in ex.talenti_curves(tier).items():
        tio.atomic_write_text(out / "curves" / f"{name}.csv", body)
    for name, rep in ex.talenti_reports(tier).items():
        tio.atomic_write_text(out / "reports" / f"{name}.json", json.dumps(rep, indent=2) + "\n")
    summary = {"tier": tier.name, "pass": all(r["pass"] for r in results.values()), "criteria": {k: r["pass"] for k, r in results.items()}}
    tio.atomic_write_text(out / "report.json", json.dumps({"summary": summary, "results": results}, indent=2) + "\n")
    _summary(f"reproduce {tier.name}: {'PASS' if summary['pass'] else 'FAIL'} -> {out}")
    return EXIT_OK if summary["pass"] else EXIT_CHECK


COMMANDS = {
    "model": cmd_model,
    "rearrange": cmd_rearrange,
    "solve-model": cmd_solve_model,
    "talenti-check": cmd_talenti,
    "torsion": cmd_torsion,
    "eigen": cmd_eigen,
    "sobolev": cmd_sobolev,
    "brownian": cmd_brownian,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"talenti-lab: error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sub = build_parser()._subparsers._group_actions[0].choices[args.command]
        sys.stderr.write(sub.format_usage())
        sys.stderr.write(f"talenti-lab {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except (SolverConvergenceError, ModelQuadratureError, EigenConvergenceError, RuntimeError, FloatingPointError) as exc:
        sys.stderr.write(f"talenti-lab {args.command}: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (ValueError, MeshError, ModelDomainError, OSError) as exc:
        sys.stderr.write(f"talenti-lab {args.command}: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
