"""P1 finite elements on sphere meshes: assembly, Poisson and eigen solves.

All integrals use the normalized measure ``area / total_area`` so that the
whole surface has mass one.  Unknowns are the interior vertices of a domain;
every other vertex carries the Dirichlet value 0.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .mesh import DomainSpec, MeshError, SurfaceMesh

MIN_AREA = 1e-14
MAX_ANGLE_DEG = 170.0


class SolverConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def triangle_frames(mesh: SurfaceMesh):
    """Orthonormal tangent frame per triangle: ``e1`` along the first edge, ``e2 = n x e1``."""
    V, T = mesh.vertices, mesh.triangles
    d1 = V[T[:, 1]] - V[T[:, 0]]
    d2 = V[T[:, 2]] - V[T[:, 0]]
    n = np.cross(d1, d2)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    e1 = d1 / np.linalg.norm(d1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return e1, e2, n


def _local_gradients(mesh: SurfaceMesh):
    """Frame gradients of the three hat functions, shape (m, 2, 3)."""
    V, T = mesh.vertices, mesh.triangles
    e1, e2, _ = triangle_frames(mesh)
    d1 = V[T[:, 1]] - V[T[:, 0]]
    d2 = V[T[:, 2]] - V[T[:, 0]]
    E = np.empty((len(T), 2, 2))
    E[:, 0, 0] = np.einsum("ij,ij->i", d1, e1)
    E[:, 1, 0] = 0.0
    E[:, 0, 1] = np.einsum("ij,ij->i", d2, e1)
    E[:, 1, 1] = np.einsum("ij,ij->i", d2, e2)
    ref = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    EinvT = np.linalg.inv(E).transpose(0, 2, 1)
    return EinvT @ ref


def check_quality(mesh: SurfaceMesh) -> None:
    areas = mesh.triangle_areas
    if np.any(areas < MIN_AREA):
        raise MeshError(f"degenerate triangle {int(np.argmin(areas))} (area {areas.min():.3e})")
    V, T = mesh.vertices, mesh.triangles
    for k in range(3):
        a = V[T[:, (k + 1) % 3]] - V[T[:, k]]
        b = V[T[:, (k + 2) % 3]] - V[T[:, k]]
        cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        if np.any(cosang < math.cos(math.radians(MAX_ANGLE_DEG))):
            raise MeshError(f"triangle angle above {MAX_ANGLE_DEG} degrees")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Per-triangle symmetric tensors in the triangle frames, with ellipticity bounds."""

    tensors: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        A = np.asarray(self.tensors, float)
        if A.ndim != 3 or A.shape[1:] != (2, 2):
            raise ValueError("tensors must have shape (m, 2, 2)")
        if not np.array_equal(A[:, 0, 1], A[:, 1, 0]):
            raise ValueError("tensors must be symmetric")
        if not 0 < self.alpha <= self.beta:
            raise ValueError("need 0 < alpha <= beta")
        eig = np.linalg.eigvalsh(A)
        slack = 1e-12 * self.beta
        if eig.min() < self.alpha - slack or eig.max() > self.beta + slack:
            raise ValueError("tensor eigenvalues leave [alpha, beta]")
        object.__setattr__(self, "tensors", A)

    @classmethod
    def identity(cls, n_triangles: int, scale: float = 1.0) -> "CoefficientField":
        A = np.zeros((n_triangles, 2, 2))
        A[:, 0, 0] = A[:, 1, 1] = scale
        return cls(A, scale, scale)

    @classmethod
    def random(cls, n_triangles: int, alpha: float, beta: float, rng) -> "CoefficientField":
        """Random orientation, eigenvalues drawn uniformly in ``[alpha, beta]``.

        The extremes ``alpha`` and ``beta`` are pinned on triangle 0 so the
        declared bounds are attained.
        """
        lam = rng.uniform(alpha, beta, size=(n_triangles, 2))
        lam[0] = (alpha, beta)
        th = rng.uniform(0.0, math.pi, size=n_triangles)
        c, s = np.cos(th), np.sin(th)
        a11 = lam[:, 0] * c * c + lam[:, 1] * s * s
        a22 = lam[:, 0] * s * s + lam[:, 1] * c * c
        a12 = (lam[:, 0] - lam[:, 1]) * c * s
        A = np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)
        eig = np.linalg.eigvalsh(A)
        return cls(A, float(min(alpha, eig.min())), float(max(beta, eig.max())))

    def scaled(self, c: float) -> "CoefficientField":
        return CoefficientField(c * self.tensors, c * self.alpha, c * self.beta)


def assemble_full(mesh: SurfaceMesh, coeff: CoefficientField | None = None) -> sparse.csr_matrix:
    """Stiffness matrix of ``E_h(u, v) = int h(grad u, grad v) dm`` on all vertices."""
    check_quality(mesh)
    G = _local_gradients(mesh)
    if coeff is None:
        local = np.einsum("mki,mkj->mij", G, G)
    else:
        if len(coeff.tensors) != mesh.n_triangles:
            raise ValueError("coefficient count differs from triangle count")
        local = np.einsum("mki,mkl,mlj->mij", G, coeff.tensors, G)
    local *= (mesh.triangle_areas / mesh.total_area)[:, None, None]
    # exact symmetry of every local block
    local = 0.5 * (local + local.transpose(0, 2, 1))
    T = mesh.triangles
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = mesh.n_vertices
    K = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def cotan_laplacian(mesh: SurfaceMesh) -> sparse.csr_matrix:
    """Cotangent-weight stiffness from edge lengths (independent of ``assemble_full``)."""
    V, T = mesh.vertices, mesh.triangles
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = T[:, (k + 1) % 3], T[:, (k + 2) % 3], T[:, k]
        a = V[i] - V[o]
        b = V[j] - V[o]
        cot = np.einsum("ij,ij->i", a, b) / np.linalg.norm(np.cross(a, b), axis=1)
        w = 0.5 * cot / mesh.total_area
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    L = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return L.tocsr()


def assemble_stiffness(dom: DomainSpec, coeff: CoefficientField | None = None) -> sparse.csr_matrix:
    """Stiffness restricted to the interior unknowns of ``dom``."""
    K = assemble_full(dom.mesh, coeff)
    idx = dom.interior_indices
    return K[idx][:, idx].tocsr()


def lumped_mass(dom: DomainSpec) -> np.ndarray:
    return dom.mesh.vertex_measure[dom.interior_indices]


@dataclass(frozen=True, eq=False)
class PoissonSolveResult:
    u: np.ndarray
    residual: float
    iterations: int


def _as_vertex_array(dom: DomainSpec, f) -> np.ndarray:
    n = dom.mesh.n_vertices
    f = np.asarray(f, float)
    if f.ndim == 0:
        return np.full(n, float(f))
    if f.size == n:
        return f.ravel()
    if f.size == dom.inside.sum():
        out = np.zeros(n)
        out[dom.inside] = f
        return out
    raise ValueError("f must be a scalar, one value per vertex, or one per inside vertex")


def _cg(K, b, rtol, maxiter):
    diag = K.diagonal()
    M = sparse.diags(1.0 / diag)
    count = [0]

    def cb(_):
        count[0] += 1

    if not np.any(b):
        return np.zeros_like(b), 0, 0.0
    x, info = splinalg.cg(K, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    res = float(np.linalg.norm(b - K @ x) / np.linalg.norm(b))
    if info != 0:
        raise SolverConvergenceError(
            f"CG stopped after {count[0]} iterations with relative residual {res:.3e}", res, count[0]
        )
    return x, count[0], res


def solve_poisson(dom: DomainSpec, coeff: CoefficientField | None, f, rtol: float = 1e-10, K=None) -> PoissonSolveResult:
    """Solve ``K u = M f`` on the interior vertices by preconditioned CG; ``u = 0`` elsewhere."""
    fv = _as_vertex_array(dom, f)
    if K is None:
        K = assemble_stiffness(dom, coeff)
    idx = dom.interior_indices
    b = lumped_mass(dom) * fv[idx]
    x, its, res = _cg(K, b, rtol, 10 * max(len(idx), 1))
    u = np.zeros(dom.mesh.n_vertices)
    u[idx] = x
    return PoissonSolveResult(u, res, its)


def first_eigen(dom: DomainSpec, coeff: CoefficientField | None = None, tol: float = 1e-12, max_iter: int = 2000, K=None):
    """Smallest ``lambda`` of ``K u = lambda M u`` by shift-invert Lanczos about 0.

    Returns ``(lambda, u)`` with ``u`` a full vertex array normalized in the
    lumped ``M`` norm and sign-fixed so that its sum is positive; ``lambda``
    is the Rayleigh quotient of the returned ``u``.  Nearly degenerate
    spectra (disjoint congruent components) are handled by the Krylov space.
    """
    if K is None:
        K = assemble_stiffness(dom, coeff)
    m = lumped_mass(dom)
    idx = dom.interior_indices
    n = len(idx)
    M = sparse.diags(m)
    try:
        if n <= 3:
            w, V = linalg.eigh(K.toarray(), np.diag(m))
            vals, x = w[:1], V[:, :1]
        else:
            vals, x = splinalg.eigsh(
                K.tocsc(), k=1, M=M.tocsc(), sigma=0.0, which="LM", tol=tol, maxiter=max_iter, v0=np.ones(n)
            )
    except splinalg.ArpackNoConvergence as exc:
        raise SolverConvergenceError("shift-invert Lanczos did not converge", None, max_iter) from exc
    x = x[:, 0]
    x /= math.sqrt(np.dot(m * x, x))
    if x.sum() < 0:
        x = -x
    Kx = K @ x
    lam = float(x @ Kx)
    res = math.sqrt(float(np.dot((Kx - lam * m * x) ** 2, 1.0 / m)))
    if not math.isfinite(lam) or res > 1e-6 * max(lam, 1.0):
        raise SolverConvergenceError("eigenpair residual too large", res, max_iter)
    u = np.zeros(dom.mesh.n_vertices)
    u[idx] = x
    return lam, u


def triangle_gradients(mesh: SurfaceMesh, u) -> np.ndarray:
    """Constant P1 gradient per triangle, in 3-D ambient coordinates."""
    G = _local_gradients(mesh)
    e1, e2, _ = triangle_frames(mesh)
    uu = np.asarray(u, float)[mesh.triangles]
    g2 = np.einsum("mki,mi->mk", G, uu)
    return g2[:, :1] * e1 + g2[:, 1:] * e2


def lq_gradient_norm(dom_or_mesh, u, q: float) -> float:
    """``int |grad u|^q dm`` (not its q-th root) for the P1 interpolant."""
    mesh = dom_or_mesh.mesh if isinstance(dom_or_mesh, DomainSpec) else dom_or_mesh
    g = np.linalg.norm(triangle_gradients(mesh, u), axis=1)
    return math.fsum(g**q * mesh.triangle_areas) / mesh.total_area


def superlevel_mass(dom_or_mesh, u, t: float) -> float:
    """Normalized area of ``{u > t}`` for the piecewise-linear ``u``."""
    mesh = dom_or_mesh.mesh if isinstance(dom_or_mesh, DomainSpec) else dom_or_mesh
    vals = np.asarray(u, float)[mesh.triangles]
    above = vals > t
    count = above.sum(axis=1)
    frac = count.astype(float) / 3.0
    frac[count == 0] = 0.0
    frac[count == 3] = 1.0
    srt = np.sort(vals, axis=1)
    a, b, c = srt[:, 0], srt[:, 1], srt[:, 2]
    one = count == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        frac[one] = (c[one] - t) ** 2 / ((c[one] - a[one]) * (c[one] - b[one]))
        two = count == 2
        frac[two] = 1.0 - (t - a[two]) ** 2 / ((c[two] - a[two]) * (b[two] - a[two]))
    return math.fsum(frac * mesh.triangle_areas) / mesh.total_area


def superlevel_perimeter(dom_or_mesh, u, t: float) -> float:
    """Length of the level curve ``{u = t}`` of the P1 interpolant, over the total area."""
    mesh = dom_or_mesh.mesh if isinstance(dom_or_mesh, DomainSpec) else dom_or_mesh
    V, T = mesh.vertices, mesh.triangles
    u = np.asarray(u, float)
    vals = u[T]
    above = vals > t
    cnt = above.sum(axis=1)
    mixed = np.nonzero((cnt == 1) | (cnt == 2))[0]
    if mixed.size == 0:
        warnings.warn(f"level {t} does not cross the mesh", RuntimeWarning, stacklevel=2)
        return 0.0
    pts = []
    for k in range(3):
        i, j = T[mixed, k], T[mixed, (k + 1) % 3]
        ui, uj = u[i], u[j]
        cross = (ui > t) != (uj > t)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(cross, (t - ui) / (uj - ui), np.nan)
        pts.append(V[i] + s[:, None] * (V[j] - V[i]))
    P = np.stack(pts, axis=1)
    valid = ~np.isnan(P[:, :, 0])
    # every mixed triangle crosses exactly two of its edges
    first = np.argmax(valid, axis=1)
    last = 2 - np.argmax(valid[:, ::-1], axis=1)
    rng = np.arange(mixed.size)
    seg = np.linalg.norm(P[rng, first] - P[rng, last], axis=1)
    return math.fsum(seg) / mesh.total_area


def levy_gromov_diagnostic(dom: DomainSpec, u, iso, n_levels: int = 10):
    """Perimeter of ``{u > t}`` against the model profile of its mass.

    ``iso`` maps a mass to the model isoperimetric profile.  Returns a list of
    ``(t, mass, perimeter, profile, margin)`` tuples; this is a diagnostic,
    the margins are not asserted.
    """
    u = np.asarray(u, float)
    lo, hi = float(u[dom.inside].min()), float(u.max())
    out = []
    for t in np.linspace(lo, hi, n_levels + 2)[1:-1]:
        mass = superlevel_mass(dom, u, t)
        per = superlevel_perimeter(dom, u, t)
        prof = float(iso(mass))
        out.append((float(t), mass, per, prof, per - prof))
    return out
