"""Synthetic single-view point clouds of simple solids.

Surfaces are sampled with low-discrepancy patterns (Fibonacci lattice on
spheres and ellipsoids, the R2 sequence on flat and cylindrical patches) so
that neighbourhoods are regular enough for curvature estimation but carry
no exact symmetry.  Points facing away from the viewpoint are culled to
mimic a single depth-camera view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .surface import PointCloud

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
_R2_G = 1.32471795724474602596  # plastic number
SHAPES = ("sphere", "cylinder", "box", "ellipsoid")


def _r2(n: int, offset: float = 0.5) -> np.ndarray:
    i = np.arange(1, n + 1)[:, None]
    alpha = np.array([1.0 / _R2_G, 1.0 / _R2_G**2])
    # The bare sequence is a lattice with exactly tied neighbour distances;
    # a fixed small jitter breaks the ties.
    jitter = np.random.default_rng(n).uniform(-0.25, 0.25, (n, 2)) / math.sqrt(max(n, 1))
    return (offset + alpha * i + jitter) % 1.0


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * i / GOLDEN
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def _disk(n: int, radius: float) -> np.ndarray:
    i = np.arange(n) + 0.5
    rho = radius * np.sqrt(i / n)
    phi = 2.0 * math.pi * i / GOLDEN**2
    return np.stack([rho * np.cos(phi), rho * np.sin(phi)], axis=1)


def _count(density: float, area: float) -> int:
    return max(int(round(density * area)), 0)


def _sphere(dims, density):
    (radius,) = dims
    n = _count(density, 4.0 * math.pi * radius**2)
    u = _fibonacci_sphere(n)
    return radius * u, u


def _ellipsoid(dims, density):
    a, b, c = dims
    p = 1.6075
    area = 4.0 * math.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3.0) ** (1.0 / p)
    u = _fibonacci_sphere(_count(density, area))
    scale = np.array([a, b, c])
    normals = u / scale**2
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return u * scale, normals


def _cylinder(dims, density):
    radius, length = dims
    n_side = _count(density, 2.0 * math.pi * radius * length)
    uv = _r2(n_side)
    theta = 2.0 * math.pi * uv[:, 0]
    x = (uv[:, 1] - 0.5) * length
    side = np.stack([x, radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    side_n = np.stack([np.zeros(n_side), np.cos(theta), np.sin(theta)], axis=1)
    pts = [side]
    nrm = [side_n]
    n_cap = _count(density, math.pi * radius**2)
    disk = _disk(n_cap, radius)
    for sign in (-1.0, 1.0):
        cap = np.column_stack([np.full(n_cap, sign * length / 2.0), sign * disk])
        pts.append(cap)
        nrm.append(np.tile([sign, 0.0, 0.0], (n_cap, 1)))
    return np.concatenate(pts), np.concatenate(nrm)


def _box(dims, density):
    half = np.asarray(dims, dtype=float) / 2.0
    pts = []
    nrm = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        area = 4.0 * half[others[0]] * half[others[1]]
        n = _count(density, area)
        for sign in (-1.0, 1.0):
            uv = _r2(n, offset=0.5 + 0.1 * axis + (0.05 if sign > 0 else 0.0))
            face = np.zeros((n, 3))
            face[:, axis] = sign * half[axis]
            face[:, others[0]] = (2.0 * uv[:, 0] - 1.0) * half[others[0]]
            face[:, others[1]] = (2.0 * uv[:, 1] - 1.0) * half[others[1]]
            normal = np.zeros(3)
            normal[axis] = sign
            pts.append(face)
            nrm.append(np.tile(normal, (n, 1)))
    return np.concatenate(pts), np.concatenate(nrm)


_SAMPLERS = {"sphere": (_sphere, 1), "cylinder": (_cylinder, 2), "box": (_box, 3), "ellipsoid": (_ellipsoid, 3)}


@dataclass(frozen=True)
class ShapeSpec:
    """A solid centred at the origin.

    ``dims``: sphere ``(radius,)``; cylinder ``(radius, length)`` with its axis
    along x; box ``(lx, ly, lz)`` full edge lengths; ellipsoid ``(a, b, c)``
    semi-axes.  ``density`` is points per square metre of surface.
    """

    kind: str
    dims: tuple[float, ...]
    density: float = 2.0e5
    viewpoint: tuple[float, float, float] = (0.0, 0.0, 0.5)
    noise: float = 0.0
    full_view: bool = False

    def __post_init__(self):
        if self.kind not in _SAMPLERS:
            raise DataError(f"unknown shape {self.kind!r}; expected one of {SHAPES}")
        expected = _SAMPLERS[self.kind][1]
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != expected or not all(d > 0 and math.isfinite(d) for d in dims):
            raise DataError(f"{self.kind} needs {expected} positive dimension(s), got {self.dims}")
        if not self.density > 0:
            raise DataError("density must be positive")
        if self.noise < 0:
            raise DataError("noise must be non-negative")
        object.__setattr__(self, "dims", dims)


def surface_samples(spec: ShapeSpec):
    """Full-surface samples and their analytic outward normals."""
    sampler, _ = _SAMPLERS[spec.kind]
    return sampler(spec.dims, spec.density)


def generate_cloud(spec: ShapeSpec, rng: np.random.Generator | None = None) -> PointCloud:
    pts, normals = surface_samples(spec)
    vp = np.asarray(spec.viewpoint, dtype=float)
    if not spec.full_view:
        keep = np.einsum("ni,ni->n", normals, vp - pts) > 0
        pts = pts[keep]
    if spec.noise > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        pts = pts + spec.noise * rng.standard_normal(pts.shape)
    if len(pts) == 0:
        raise DataError("no surface points are visible from the viewpoint")
    return PointCloud(pts, vp)


def analytic_distance(spec: ShapeSpec, points: np.ndarray) -> np.ndarray:
    """Unsigned distance from points to the analytic surface (sphere/cylinder/box only)."""
    pts = np.asarray(points, dtype=float)
    if spec.kind == "sphere":
        return np.abs(np.linalg.norm(pts, axis=1) - spec.dims[0])
    if spec.kind == "cylinder":
        radius, length = spec.dims
        rho = np.linalg.norm(pts[:, 1:], axis=1)
        dr = rho - radius
        dx = np.abs(pts[:, 0]) - length / 2.0
        outside = np.hypot(np.maximum(dr, 0), np.maximum(dx, 0))
        inside = np.minimum(np.maximum(dr, dx), 0.0)
        return np.abs(outside + inside)
    if spec.kind == "box":
        q = np.abs(pts) - np.asarray(spec.dims) / 2.0
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)
    raise DataError("analytic distance is not available for ellipsoids")


def parse_dims(values: Sequence[float] | str) -> tuple[float, ...]:
    if isinstance(values, str):
        values = [v for v in values.replace(",", " ").split()]
    try:
        return tuple(float(v) for v in values)
    except ValueError as exc:
        raise DataError(f"bad dimensions {values!r}") from exc
