"""Monte-Carlo exit times of Brownian motion (generator 1/2 Laplacian) on the round sphere.

Walkers take geodesic steps: an isotropic tangent Gaussian with per-component
variance ``dt`` is pushed through the exponential map.  Exit is tested after
every step, either against analytic caps (exact geodesic radius) or against a
latitude-longitude raster of a mesh domain.

Random streams: walkers are grouped in fixed blocks of ``BLOCK`` and block
``b`` of stream ``k`` draws from ``PCG64(SeedSequence(seed, spawn_key=(k, b)))``.
Results never depend on the number of worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from scipy.spatial import cKDTree

from .mesh import CapUnion, DomainSpec, SphericalCap, _unit

BLOCK = 512
RNG_ALGORITHM = "numpy PCG64, SeedSequence(seed, spawn_key=(stream, block)), block=512"
# |bias| <= DT_BIAS_CONST * sqrt(dt) for unit-radius domains.  Hemisphere runs
# from the pole at dt in {1e-2, 4e-3, 1e-3} give slopes 1.14-1.20; rounded up.
DT_BIAS_CONST = 1.5
THREADS_ENV = "TALENTI_LAB_THREADS"

_MODE_CAPS = 0
_MODE_RASTER = 1


@dataclass(frozen=True)
class ExitTimeEstimate:
    start: tuple
    mean: float
    stderr: float
    n_samples: int
    dt: float
    seed: int
    midpoint: bool = True
    rng: str = RNG_ALGORITHM

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = [float(x) for x in self.start]
        return d


@dataclass(frozen=True)
class AverageExitTime:
    mean: float
    stderr: float
    n_points: int
    n_samples_per_point: int
    dt: float
    seed: int
    v: float
    model: float
    margin: float
    allowance: dict = field(default_factory=dict)

    @property
    def combined_error(self) -> float:
        return float(sum(self.allowance.values()))

    @property
    def passed(self) -> bool:
        return self.margin >= -self.combined_error

    @property
    def strict(self) -> bool:
        return self.margin > 3.0 * self.combined_error

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(combined_error=self.combined_error, passed=self.passed, strict=self.strict, rng=RNG_ALGORITHM)
        return d


def resolve_workers(workers: int | None) -> int:
    w = (os.cpu_count() or 1) if workers is None else int(workers)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        w = min(w, max(1, int(cap)))
    return max(1, w)


@numba.njit(nogil=True, cache=True)
def _inside(x, y, z, mode, centers, cos_r, raster):
    if mode == 0:
        for j in range(centers.shape[0]):
            if x * centers[j, 0] + y * centers[j, 1] + z * centers[j, 2] > cos_r[j]:
                return True
        return False
    nt, nl = raster.shape
    zz = min(1.0, max(-1.0, z))
    i = int(math.acos(zz) / math.pi * nt)
    if i >= nt:
        i = nt - 1
    phi = math.atan2(y, x)
    if phi < 0:
        phi += 2.0 * math.pi
    j = int(phi / (2.0 * math.pi) * nl)
    if j >= nl:
        j = nl - 1
    return raster[i, j] != 0


@numba.njit(nogil=True, cache=True)
def _walk_block(rng, start, n, sd, dt, credit, mode, centers, cos_r, raster, max_steps):
    # unit-sphere coordinates; sd is the per-component angular step
    out = np.empty(n)
    for w in range(n):
        x, y, z = start[0], start[1], start[2]
        k = 0
        while True:
            k += 1
            if abs(z) < 0.9:
                ax, ay, az = 0.0, 0.0, 1.0
            else:
                ax, ay, az = 1.0, 0.0, 0.0
            e1x = y * az - z * ay
            e1y = z * ax - x * az
            e1z = x * ay - y * ax
            nrm = math.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
            e1x /= nrm
            e1y /= nrm
            e1z /= nrm
            e2x = y * e1z - z * e1y
            e2y = z * e1x - x * e1z
            e2z = x * e1y - y * e1x
            a = sd * rng.standard_normal()
            b = sd * rng.standard_normal()
            tx = a * e1x + b * e2x
            ty = a * e1y + b * e2y
            tz = a * e1z + b * e2z
            L = math.sqrt(a * a + b * b)
            c = math.cos(L)
            s = math.sin(L) / L if L > 0 else 1.0
            x, y, z = c * x + s * tx, c * y + s * ty, c * z + s * tz
            r = math.sqrt(x * x + y * y + z * z)
            x /= r
            y /= r
            z /= r
            if not _inside(x, y, z, mode, centers, cos_r, raster):
                break
            if k >= max_steps:
                k = -1
                break
        out[w] = -1.0 if k < 0 else (k - credit) * dt
    return out


@dataclass(frozen=True)
class _Geometry:
    mode: int
    centers: np.ndarray
    cos_r: np.ndarray
    raster: np.ndarray
    R: float
    inradius: float
    v: float
    mesh_h: float = 0.0

    def contains(self, p, closed=False) -> bool:
        p = _unit(p)
        if self.mode == _MODE_CAPS:
            d = self.centers @ p
            return bool(np.any(d >= self.cos_r - 1e-12) if closed else np.any(d > self.cos_r))
        empty = np.zeros((0, 3))
        return bool(_inside(p[0], p[1], p[2], self.mode, empty, np.zeros(0), self.raster))


_raster_cache: dict = {}


@numba.njit(cache=True)
def _locate(P, V, T, inc_ptr, inc_idx, near, complete):
    out = np.zeros(P.shape[0], dtype=np.uint8)
    for i in range(P.shape[0]):
        px, py, pz = P[i, 0], P[i, 1], P[i, 2]
        found = False
        for k in range(near.shape[1]):
            vtx = near[i, k]
            for q in range(inc_ptr[vtx], inc_ptr[vtx + 1]):
                t = inc_idx[q]
                ok = True
                for e in range(3):
                    a = V[T[t, e]]
                    b = V[T[t, (e + 1) % 3]]
                    det = (a[1] * b[2] - a[2] * b[1]) * px + (a[2] * b[0] - a[0] * b[2]) * py + (a[0] * b[1] - a[1] * b[0]) * pz
                    if det < 0:
                        ok = False
                        break
                if ok:
                    out[i] = complete[t]
                    found = True
                    break
            if found:
                break
    return out


def rasterize_domain(dom: DomainSpec, n_theta: int = 1024) -> np.ndarray:
    """Latitude-longitude raster (``n_theta x 2 n_theta``) of the union of complete triangles."""
    key = (id(dom), n_theta)
    if key in _raster_cache and _raster_cache[key][0] is dom:
        return _raster_cache[key][1]
    mesh = dom.mesh
    V = mesh.vertices / mesh.radius
    T = mesh.triangles
    theta = (np.arange(n_theta) + 0.5) * math.pi / n_theta
    phi = (np.arange(2 * n_theta) + 0.5) * math.pi / n_theta
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    P = np.stack([st * np.cos(phi), st * np.sin(phi), np.broadcast_to(ct, (n_theta, 2 * n_theta))], -1).reshape(-1, 3)
    _, near = cKDTree(V).query(P, k=3)
    flat = T.ravel()
    order = np.argsort(flat, kind="stable")
    inc_idx = (order // 3).astype(np.int64)
    inc_ptr = np.concatenate([[0], np.cumsum(np.bincount(flat, minlength=len(V)))]).astype(np.int64)
    complete = dom.complete_triangles.astype(np.uint8)
    raster = _locate(P, V, T, inc_ptr, inc_idx, near.astype(np.int64), complete).reshape(n_theta, 2 * n_theta)
    _raster_cache.clear()
    _raster_cache[key] = (dom, raster)
    return raster


def _mesh_inradius(dom: DomainSpec) -> float:
    mesh = dom.mesh
    out = mesh.vertices[~dom.inside]
    ins = mesh.vertices[dom.inside]
    d, _ = cKDTree(out).query(ins)
    chord = np.clip(d / (2 * mesh.radius), 0.0, 1.0)
    return float(2 * mesh.radius * np.max(np.arcsin(chord)))


def _geometry(domain, n_theta: int = 1024) -> _Geometry:
    if isinstance(domain, SphericalCap):
        domain = CapUnion((domain,))
    if isinstance(domain, CapUnion):
        R = domain.R
        centers = np.array([_unit(c.center) for c in domain.caps], float)
        cos_r = np.array([math.cos(c.radius / R) for c in domain.caps])
        inr = max(c.radius for c in domain.caps)
        return _Geometry(_MODE_CAPS, centers, cos_r, np.zeros((1, 1), np.uint8), R, inr, domain.mass)
    if isinstance(domain, DomainSpec):
        raster = rasterize_domain(domain, n_theta)
        return _Geometry(
            _MODE_RASTER, np.zeros((0, 3)), np.zeros(0), raster, domain.mesh.radius,
            _mesh_inradius(domain), domain.v, domain.mesh.max_edge_length,
        )
    raise TypeError("domain must be a SphericalCap, CapUnion or DomainSpec")


def _check_dt(geo: _Geometry, dt: float):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if math.sqrt(2.0 * dt) > geo.inradius / 4.0:
        raise ValueError(
            f"dt={dt} too large: step size sqrt(2 dt)={math.sqrt(2 * dt):.3g} exceeds a quarter of the inradius {geo.inradius:.3g}"
        )


def _run_tasks(geo: _Geometry, tasks, dt, seed, midpoint, workers, max_steps):
    """``tasks`` = list of (start_unit, count, stream); returns one array per task."""
    sd = math.sqrt(dt) / geo.R
    credit = 0.5 if midpoint else 0.0
    jobs = []
    for ti, (p, count, stream) in enumerate(tasks):
        for b in range(0, count, BLOCK):
            jobs.append((ti, p, min(BLOCK, count - b), stream, b // BLOCK))

    def run(job):
        _, p, n, stream, blk = job
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, blk))))
        return _walk_block(rng, p, n, sd, dt, credit, geo.mode, geo.centers, geo.cos_r, geo.raster, max_steps)

    nw = resolve_workers(workers)
    if nw == 1 or len(jobs) == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            results = list(ex.map(run, jobs))
    per_task = [[] for _ in tasks]
    for j, r in zip(jobs, results):
        per_task[j[0]].append(r)
    out = [np.concatenate(rs) for rs in per_task]
    if any(np.any(o < 0) for o in out):
        raise RuntimeError(f"a walker did not exit within {max_steps} steps")
    return out


def _mean_stderr(x: np.ndarray):
    n = x.size
    mean = math.fsum(x) / n
    if n < 2:
        return mean, math.nan
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def simulate_exit_time(
    domain,
    start,
    dt: float,
    n_samples: int,
    seed: int,
    workers: int | None = 1,
    midpoint: bool = True,
    max_steps: int = 10**9,
    n_theta: int = 1024,
) -> ExitTimeEstimate:
    """Mean exit time from ``domain`` of walkers started at ``start``."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    geo = _geometry(domain, n_theta)
    _check_dt(geo, dt)
    p = _unit(np.asarray(start, float))
    if not geo.contains(p, closed=True):
        raise ValueError("start point lies outside the domain")
    (times,) = _run_tasks(geo, [(p, int(n_samples), 0)], dt, int(seed), midpoint, workers, max_steps)
    mean, se = _mean_stderr(times)
    return ExitTimeEstimate(tuple(float(c) for c in p), mean, se, int(n_samples), float(dt), int(seed), midpoint)


def _sample_caps(domain: CapUnion, n: int, rng) -> np.ndarray:
    masses = np.array([c.mass for c in domain.caps])
    which = rng.choice(len(masses), size=n, p=masses / masses.sum())
    out = np.empty((n, 3))
    for j, cap in enumerate(domain.caps):
        sel = which == j
        k = int(sel.sum())
        # uniform in area: cos(theta) = 1 - 2 m U
        ct = 1.0 - 2.0 * cap.mass * rng.random(k)
        st = np.sqrt(np.clip(1.0 - ct**2, 0.0, None))
        ph = 2 * math.pi * rng.random(k)
        local = np.stack([st * np.cos(ph), st * np.sin(ph), ct], 1)
        c = _unit(cap.center)
        a = np.array([1.0, 0.0, 0.0]) if abs(c[2]) > 0.9 else np.array([0.0, 0.0, 1.0])
        e1 = _unit(np.cross(a, c))
        e2 = np.cross(c, e1)
        out[sel] = local @ np.stack([e1, e2, c])
    return out


def average_exit_time(
    domain,
    dt: float,
    n_samples_per_point: int,
    quadrature_points: int,
    seed: int,
    workers: int | None = 1,
    model_T=None,
    n_theta: int = 1024,
    c_tol: float = 5.0,
) -> AverageExitTime:
    """Estimate ``(1/m(Omega)) int E_x tau dm(x)`` and compare with the model ball of equal mass.

    Start points are drawn from the normalized measure on the domain (cell
    weights of a mesh domain, area for analytic caps).  ``model_T(v)`` gives the
    model torsional rigidity; by default the round-sphere model is used.
    """
    from .model_space import ModelParams
    from .model_solver import torsional_rigidity_model

    if n_samples_per_point < 1 or quadrature_points < 1:
        raise ValueError("need at least one start point and one walker per point")
    if isinstance(domain, SphericalCap):
        domain = CapUnion((domain,))
    geo = _geometry(domain, n_theta)
    _check_dt(geo, dt)
    prng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2**32,))))
    if isinstance(domain, CapUnion):
        pts = _sample_caps(domain, quadrature_points, prng)
    else:
        w = domain.cell_weights
        idx = prng.choice(domain.mesh.n_vertices, size=quadrature_points, p=w / w.sum())
        pts = domain.mesh.vertices[idx] / domain.mesh.radius
    tasks = [(_unit(p), int(n_samples_per_point), i + 1) for i, p in enumerate(pts)]
    times = _run_tasks(geo, tasks, dt, int(seed), True, workers, 10**9)
    point_means = np.array([math.fsum(t) / t.size for t in times])
    mean, se = _mean_stderr(point_means)
    if quadrature_points < 2:
        se = math.inf
    if model_T is None:
        params = ModelParams(1.0 / geo.R**2, 2.0)
        model_T = lambda v: torsional_rigidity_model(params, v)
    model = model_T(geo.v) / geo.v
    allowance = {
        "statistical": float(se),
        "dt": DT_BIAS_CONST * math.sqrt(dt) * geo.R,
        "mesh": c_tol * geo.mesh_h,
    }
    return AverageExitTime(
        float(mean), float(se), int(quadrature_points), int(n_samples_per_point), float(dt), int(seed),
        float(geo.v), float(model), float(model - mean), allowance,
    )
