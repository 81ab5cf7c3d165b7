"""File formats: OFF meshes, vertex/mask/coefficient CSVs and curve dumps.

Floats are written with ``repr`` so that every file round-trips exactly and
identical inputs give identical bytes.  All writers go through
``atomic_write_text`` (temporary file in the target directory, then rename).
"""
from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

import numpy as np

from .fem import CoefficientField
from .mesh import MeshError, SurfaceMesh
from .rearrangement import StepFunction, WeightedFunction


def _fmt(x) -> str:
    return repr(float(x))


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _rows_to_text(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def _read_csv(path, header):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows or [c.strip() for c in rows[0]] != list(header):
        raise ValueError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


# meshes -------------------------------------------------------------------


def write_off(path, mesh: SurfaceMesh) -> Path:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
    lines += [" ".join(_fmt(c) for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in t) for t in mesh.triangles]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_off(path, radius: float | None = None) -> SurfaceMesh:
    """Read a triangle OFF file; the sphere radius defaults to the mean vertex norm."""
    with open(path) as fh:
        tokens = [ln.split("#", 1)[0].split() for ln in fh]
    tokens = [t for t in tokens if t]
    if not tokens or tokens[0][0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    head = tokens[0][1:] or tokens[1]
    body = tokens[1:] if tokens[0][1:] else tokens[2:]
    nv, nf = int(head[0]), int(head[1])
    if len(body) < nv + nf:
        raise MeshError(f"{path}: truncated file")
    V = np.array([[float(x) for x in row[:3]] for row in body[:nv]])
    F = []
    for row in body[nv : nv + nf]:
        if int(row[0]) != 3:
            raise MeshError(f"{path}: only triangles are supported")
        F.append([int(x) for x in row[1:4]])
    R = float(np.mean(np.linalg.norm(V, axis=1))) if radius is None else float(radius)
    mesh = SurfaceMesh(V, np.array(F, dtype=np.int64), R)
    mesh.validate()
    return mesh


# vertex data --------------------------------------------------------------


def write_vertex_csv(path, values) -> Path:
    rows = ([str(i), _fmt(x)] for i, x in enumerate(np.asarray(values, float)))
    return atomic_write_text(path, _rows_to_text(("vertex_index", "value"), rows))


def read_vertex_csv(path, n_vertices: int, default: float = 0.0) -> np.ndarray:
    """Per-vertex values; vertices not listed get ``default``."""
    out = np.full(n_vertices, float(default))
    for r in _read_csv(path, ("vertex_index", "value")):
        i = int(r[0])
        if not 0 <= i < n_vertices:
            raise ValueError(f"{path}: vertex index {i} out of range")
        out[i] = float(r[1])
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{path}: non-finite value")
    return out


def write_mask_csv(path, inside) -> Path:
    rows = ([str(i), "1" if b else "0"] for i, b in enumerate(np.asarray(inside, bool)))
    return atomic_write_text(path, _rows_to_text(("vertex_index", "inside"), rows))


def read_mask_csv(path, n_vertices: int) -> np.ndarray:
    mask = np.zeros(n_vertices, dtype=bool)
    for r in _read_csv(path, ("vertex_index", "inside")):
        i, flag = int(r[0]), r[1].strip()
        if flag not in ("0", "1"):
            raise ValueError(f"{path}: inside flag must be 0 or 1")
        if not 0 <= i < n_vertices:
            raise ValueError(f"{path}: vertex index {i} out of range")
        mask[i] = flag == "1"
    return mask


# coefficients -------------------------------------------------------------


def write_coefficients_csv(path, coeff: CoefficientField) -> Path:
    T = coeff.tensors
    rows = ([str(i), _fmt(t[0, 0]), _fmt(t[0, 1]), _fmt(t[1, 1])] for i, t in enumerate(T))
    return atomic_write_text(path, _rows_to_text(("triangle_index", "a11", "a12", "a22"), rows))


def read_coefficients_csv(path, n_triangles: int, alpha: float | None = None, beta: float | None = None) -> CoefficientField:
    """Tensors in each triangle's first-edge frame; missing bounds default to the extreme eigenvalues."""
    T = np.full((n_triangles, 2, 2), np.nan)
    for r in _read_csv(path, ("triangle_index", "a11", "a12", "a22")):
        i = int(r[0])
        if not 0 <= i < n_triangles:
            raise ValueError(f"{path}: triangle index {i} out of range")
        a11, a12, a22 = (float(x) for x in r[1:])
        T[i] = [[a11, a12], [a12, a22]]
    if np.isnan(T).any():
        raise ValueError(f"{path}: every triangle needs a tensor")
    ev = np.linalg.eigvalsh(T)
    a = float(ev.min()) if alpha is None else float(alpha)
    b = float(ev.max()) if beta is None else float(beta)
    return CoefficientField(T, a, b)


# one-dimensional profiles -------------------------------------------------


def step_function_csv(step: StepFunction) -> str:
    """``breakpoint,value``: each row is a left breakpoint and the value to its right.

    The last row repeats the final value at the total mass (left continuity).
    """
    bp, vals = step.breakpoints, step.values
    rows = [[_fmt(b), _fmt(x)] for b, x in zip(bp[:-1], vals)]
    rows.append([_fmt(bp[-1]), _fmt(vals[-1])])
    return _rows_to_text(("breakpoint", "value"), rows)


def read_step_function_csv(path) -> StepFunction:
    rows = _read_csv(path, ("breakpoint", "value"))
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two rows")
    bp = np.array([float(r[0]) for r in rows])
    vals = np.array([float(r[1]) for r in rows[:-1]])
    return StepFunction(bp, vals)


def read_cells_csv(path) -> WeightedFunction:
    rows = _read_csv(path, ("value", "weight"))
    return WeightedFunction(np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))


def model_csv(rho, w, w_prime) -> str:
    rows = ([_fmt(a), _fmt(b), _fmt(c)] for a, b, c in zip(rho, w, w_prime))
    return _rows_to_text(("rho", "w", "w_prime"), rows)
