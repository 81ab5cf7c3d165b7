"""Triangulated spheres, vertex measures and vertex-mask domains."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .rearrangement import _exact_prefix_sums


class MeshError(ValueError):
    pass


def _unit(x):
    x = np.asarray(x, float)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _icosahedron():
    # one vertex on each pole, two staggered rings of five
    z = 1.0 / math.sqrt(5.0)
    r = 2.0 / math.sqrt(5.0)
    verts = [(0.0, 0.0, 1.0), (0.0, 0.0, -1.0)]
    for k in range(5):
        a = 2 * math.pi * k / 5
        verts.append((r * math.cos(a), r * math.sin(a), z))
    for k in range(5):
        a = 2 * math.pi * k / 5 + math.pi / 5
        verts.append((r * math.cos(a), r * math.sin(a), -z))
    up = lambda k: 2 + k % 5
    lo = lambda k: 7 + k % 5
    faces = []
    for k in range(5):
        faces.append((0, up(k), up(k + 1)))
        faces.append((up(k), lo(k), up(k + 1)))
        faces.append((up(k + 1), lo(k), lo(k + 1)))
        faces.append((1, lo(k + 1), lo(k)))
    V = np.array(verts)
    F = np.array(faces, dtype=np.int64)
    return V, _orient_outward(V, F)


def _orient_outward(V, F):
    a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    n = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", n, a + b + c) < 0
    F = F.copy()
    F[flip] = F[flip][:, [0, 2, 1]]
    return F


def _subdivide(V, F):
    nf = len(F)
    edges = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    mids = _unit(0.5 * (V[uniq[:, 0]] + V[uniq[:, 1]]))
    idx = len(V) + inv
    ab, bc, ca = idx[:nf], idx[nf : 2 * nf], idx[2 * nf :]
    F0, F1, F2 = F[:, 0], F[:, 1], F[:, 2]
    newF = np.concatenate(
        [
            np.stack([F0, ab, ca], 1),
            np.stack([ab, F1, bc], 1),
            np.stack([ca, bc, F2], 1),
            np.stack([ab, bc, ca], 1),
        ]
    )
    return np.vstack([V, mids]), newF


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    radius: float = 1.0

    def __post_init__(self):
        V = np.ascontiguousarray(self.vertices, dtype=float)
        T = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 3 or T.ndim != 2 or T.shape[1] != 3:
            raise MeshError("vertices must be (n, 3) and triangles (m, 3)")
        if T.size and (T.min() < 0 or T.max() >= len(V)):
            raise MeshError("triangle index out of range")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", T)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        V, T = self.vertices, self.triangles
        n = np.cross(V[T[:, 1]] - V[T[:, 0]], V[T[:, 2]] - V[T[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)

    @cached_property
    def total_area(self) -> float:
        return math.fsum(self.triangle_areas)

    @cached_property
    def vertex_measure(self) -> np.ndarray:
        """Barycentric lumped areas divided by the total area (sums to one)."""
        m = np.bincount(self.triangles.ravel(), weights=np.repeat(self.triangle_areas / 3.0, 3), minlength=self.n_vertices)
        return m / self.total_area

    @cached_property
    def edges(self) -> np.ndarray:
        T = self.triangles
        e = np.sort(np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e), dtype=np.int8)
        A = sparse.coo_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        return A.tocsr()

    @cached_property
    def max_edge_length(self) -> float:
        e = self.edges
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    def validate(self) -> None:
        """Closed orientable triangulation on the sphere of ``self.radius``."""
        T = self.triangles
        directed = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        _, counts = np.unique(und, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise MeshError("every edge must be shared by exactly two triangles")
        d_uniq = np.unique(directed, axis=0)
        if len(d_uniq) != len(directed):
            raise MeshError("inconsistent triangle orientation")
        rad = np.linalg.norm(self.vertices, axis=1)
        if np.max(np.abs(rad - self.radius)) > 1e-9 * self.radius:
            raise MeshError("vertices are not on the sphere")


def generate_icosphere(subdivisions: int, radius: float = 1.0) -> SurfaceMesh:
    """Icosahedron with a vertex at the north pole, subdivided ``subdivisions`` times."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    V, F = _icosahedron()
    for _ in range(subdivisions):
        V, F = _subdivide(V, F)
    return SurfaceMesh(radius * V, F, float(radius))


def geodesic_distance(mesh_or_radius, points, center) -> np.ndarray:
    R = mesh_or_radius.radius if isinstance(mesh_or_radius, SurfaceMesh) else float(mesh_or_radius)
    c = _unit(center)
    cosang = np.clip(np.asarray(points) @ c / R, -1.0, 1.0)
    return R * np.arccos(cosang)


@dataclass(frozen=True, eq=False)
class DomainSpec:
    mesh: SurfaceMesh
    inside: np.ndarray
    label: str = field(default="custom")

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool).ravel()
        if inside.size != self.mesh.n_vertices:
            raise MeshError("mask length differs from vertex count")
        object.__setattr__(self, "inside", inside)
        if not self.complete_triangles.any():
            raise MeshError("inside set contains no complete triangle")
        if not 0 < self.v < 1:
            raise MeshError(f"domain measure must lie in (0, 1), got {self.v}")

    @cached_property
    def complete_triangles(self) -> np.ndarray:
        """Triangles with all three vertices inside; their union is the discrete domain."""
        return self.inside[self.mesh.triangles].all(axis=1)

    @cached_property
    def v(self) -> float:
        """Normalized area of the union of complete triangles."""
        return math.fsum(self.mesh.triangle_areas[self.complete_triangles]) / self.mesh.total_area

    @cached_property
    def cell_weights(self) -> np.ndarray:
        """Lumped measure of each vertex inside the discrete domain (0 elsewhere)."""
        m = self.mesh
        keep = self.complete_triangles
        w = np.bincount(
            m.triangles[keep].ravel(), weights=np.repeat(m.triangle_areas[keep] / 3.0, 3), minlength=m.n_vertices
        )
        return w / m.total_area

    @cached_property
    def boundary(self) -> np.ndarray:
        """Inside vertices with at least one outside neighbour."""
        outside = (~self.inside).astype(np.int8)
        touches = self.mesh.adjacency @ outside > 0
        return self.inside & touches

    @cached_property
    def interior(self) -> np.ndarray:
        return self.inside & ~self.boundary

    @cached_property
    def interior_indices(self) -> np.ndarray:
        return np.nonzero(self.interior)[0]

    @cached_property
    def inside_indices(self) -> np.ndarray:
        return np.nonzero(self.inside)[0]

    def weighted(self, values):
        """Restrict a full vertex array to the inside cells with their measures."""
        from .rearrangement import WeightedFunction

        values = np.asarray(values, float)
        if values.size != self.mesh.n_vertices:
            raise ValueError("expected one value per mesh vertex")
        return WeightedFunction(values[self.inside], self.cell_weights[self.inside])


def cap_mask(mesh: SurfaceMesh, center, target_mass: float) -> np.ndarray:
    """Vertices closest to ``center`` whose complete triangles carry the most mass <= target.

    Vertices are added by geodesic distance (index breaks ties); the shortest
    prefix reaching the best admissible mass is returned.
    """
    if not 0 < target_mass < 1:
        raise ValueError("target mass must lie in (0, 1)")
    n = mesh.n_vertices
    d = geodesic_distance(mesh, mesh.vertices, center)
    order = np.lexsort((np.arange(n), d))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    # a triangle becomes complete when its highest-ranked vertex joins
    done_at = rank[mesh.triangles].max(axis=1)
    gained = np.bincount(done_at, weights=mesh.triangle_areas, minlength=n) / mesh.total_area
    cum = _exact_prefix_sums(gained)[1:]
    ok = np.nonzero(cum <= target_mass + 1e-12)[0]
    if ok.size == 0 or cum[ok[-1]] <= 0:
        raise MeshError("no complete triangle fits inside the requested mass")
    best = cum[ok[-1]]
    k = int(np.searchsorted(cum, best, side="left")) + 1
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    return mask


def cap_domain(mesh: SurfaceMesh, center, target_mass: float) -> DomainSpec:
    mask = cap_mask(mesh, center, target_mass)
    if mask.all():
        raise MeshError("cap covers the whole sphere")
    return DomainSpec(mesh, mask, label=f"cap:{target_mass:g}")


def caps_domain(mesh: SurfaceMesh, centers, masses) -> DomainSpec:
    """Union of caps; raises when two caps share or touch a vertex."""
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    for c, m in zip(centers, masses):
        cm = cap_mask(mesh, c, m)
        near = mask | (mesh.adjacency @ mask.astype(np.int8) > 0)
        if np.any(cm & near):
            raise MeshError("caps overlap or touch")
        mask |= cm
    return DomainSpec(mesh, mask, label="caps:" + "+".join(f"{m:g}" for m in masses))


def two_cap_domain(mesh: SurfaceMesh, total_mass: float = 0.3) -> DomainSpec:
    """Antipodal caps around the poles, each carrying half of ``total_mass``."""
    half = 0.5 * total_mass
    return caps_domain(mesh, [(0, 0, 1), (0, 0, -1)], [half, half])


@dataclass(frozen=True)
class SphericalCap:
    """Open geodesic ball ``{x : d(x, center) < radius}`` on the sphere of radius ``R``."""

    center: tuple
    radius: float
    R: float = 1.0

    @classmethod
    def from_mass(cls, center, mass: float, R: float = 1.0) -> "SphericalCap":
        # normalized area of a cap on the 2-sphere: (1 - cos(r/R)) / 2
        if not 0 < mass < 1:
            raise ValueError("mass must lie in (0, 1)")
        return cls(tuple(_unit(center)), R * math.acos(1.0 - 2.0 * mass), R)

    @property
    def mass(self) -> float:
        return 0.5 * (1.0 - math.cos(self.radius / self.R))

    def contains(self, x) -> np.ndarray:
        return geodesic_distance(self.R, np.atleast_2d(x), self.center) < self.radius


@dataclass(frozen=True)
class CapUnion:
    caps: tuple

    @property
    def mass(self) -> float:
        # caller guarantees the caps are disjoint
        return math.fsum(c.mass for c in self.caps)

    @property
    def R(self) -> float:
        return self.caps[0].R

    def contains(self, x) -> np.ndarray:
        out = np.zeros(len(np.atleast_2d(x)), dtype=bool)
        for c in self.caps:
            out |= c.contains(x)
        return out
