"""Contact receptive fields, contact models and contact-model selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyModelError, NoContactsError
from .geom import Bandwidth, Density, Pose, compose_arrays, inverse_arrays, quat_conj, quat_rotate
from .object_model import ObjectModel

DEFAULT_LAMBDA = 2500.0
DEFAULT_DELTA = 0.04
DEFAULT_ETA = 0.5
DEFAULT_ZETA = 0.5


@dataclass(frozen=True)
class LinkGeometry:
    """A capsule or box attached to a link frame.

    capsule ``dims = (radius, length)``: the segment runs from the link origin
    to ``(0, 0, length)``.  box ``dims = (lx, ly, lz)``: full edge lengths,
    centred on the link origin.
    """

    kind: str
    dims: tuple[float, ...]

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        expected = {"capsule": 2, "box": 3}.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown link geometry {self.kind!r}")
        if len(dims) != expected or not all(d > 0 and math.isfinite(d) for d in dims):
            raise ValueError(f"{self.kind} needs {expected} strictly positive dimensions, got {self.dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def center(self) -> np.ndarray:
        if self.kind == "capsule":
            return np.array([0.0, 0.0, self.dims[1] / 2.0])
        return np.zeros(3)

    @property
    def bounding_radius(self) -> float:
        """Radius of a ball about :attr:`center` that contains the primitive."""
        if self.kind == "capsule":
            return self.dims[0] + self.dims[1] / 2.0
        return 0.5 * math.sqrt(sum(d * d for d in self.dims))

    def cover_spheres(self) -> tuple[np.ndarray, float]:
        """Local centres and a common radius of balls whose union contains the primitive."""
        if self.kind == "capsule":
            radius, length = self.dims
            m = max(1, math.ceil(length / radius))
            z = (np.arange(m) + 0.5) * length / m
            return np.column_stack([np.zeros(m), np.zeros(m), z]), radius + length / (2 * m)
        dims = np.asarray(self.dims)
        counts = np.ceil(dims / dims.min() - 1e-9).astype(int)
        half = dims / (2 * counts)
        axes = [(np.arange(n) + 0.5) * 2 * h - d / 2 for n, h, d in zip(counts, half, dims)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        return grid, float(np.linalg.norm(half))

    def closest_point_local(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "capsule":
            radius, length = self.dims
            t = np.clip(pts[:, 2], 0.0, length)
            axis_pt = np.zeros_like(pts)
            axis_pt[:, 2] = t
            d = pts - axis_pt
            n = np.linalg.norm(d, axis=1, keepdims=True)
            on_axis = n[:, 0] < 1e-15
            # Any radial direction is closest for a point on the axis.
            d[on_axis] = [1.0, 0.0, 0.0]
            n[on_axis] = 1.0
            return axis_pt + radius * d / n
        half = np.asarray(self.dims) / 2.0
        clamped = np.clip(pts, -half, half)
        inside = np.all(np.abs(pts) <= half, axis=1)
        if np.any(inside):
            p_in = pts[inside]
            gap = half - np.abs(p_in)
            face = np.argmin(gap, axis=1)
            rows = np.arange(len(p_in))
            proj = p_in.copy()
            proj[rows, face] = np.where(p_in[rows, face] >= 0, half[face], -half[face])
            clamped[inside] = proj
        return clamped

    def signed_distance_local(self, pts: np.ndarray) -> np.ndarray:
        """Distance to the surface, negative inside the primitive."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "capsule":
            radius, length = self.dims
            t = np.clip(pts[:, 2], 0.0, length)
            d = pts.copy()
            d[:, 2] -= t
            return np.linalg.norm(d, axis=1) - radius
        q = np.abs(pts) - np.asarray(self.dims) / 2.0
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0.0)

    def support_min(self, direction: np.ndarray) -> np.ndarray:
        """``min_x direction . x`` over the primitive, for local directions (N, 3)."""
        direction = np.atleast_2d(direction)
        if self.kind == "capsule":
            radius, length = self.dims
            return np.minimum(0.0, length * direction[:, 2]) - radius * np.linalg.norm(direction, axis=1)
        half = np.asarray(self.dims) / 2.0
        return -np.abs(direction) @ half


def _to_local(link_pose: Pose, pts: np.ndarray) -> np.ndarray:
    return quat_rotate(quat_conj(link_pose.q), np.atleast_2d(pts) - link_pose.p)


def closest_point(link: LinkGeometry, link_pose: Pose, p) -> np.ndarray:
    """Closest point on the link surface to ``p`` (world coordinates)."""
    p = np.asarray(p, dtype=float)
    local = link.closest_point_local(_to_local(link_pose, p))
    out = link_pose.transform(local)
    return out[0] if p.ndim == 1 else out


def surface_distance(link: LinkGeometry, link_pose: Pose, p) -> np.ndarray:
    """Unsigned distance ``||p - a||`` to the closest surface point ``a``."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return np.abs(link.signed_distance_local(_to_local(link_pose, p)))


@dataclass(frozen=True)
class ReceptiveFieldParams:
    lam: float = DEFAULT_LAMBDA
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not (self.lam > 0 and self.delta > 0):
            raise ValueError("receptive field needs lambda > 0 and delta > 0")


def receptive_field_values(link: LinkGeometry, link_pose: Pose, points, params: ReceptiveFieldParams) -> np.ndarray:
    dist = surface_distance(link, link_pose, points)
    return np.where(dist < params.delta, np.exp(-params.lam * dist * dist), 0.0)


def receptive_field(link: LinkGeometry, link_pose: Pose, v: Pose, params: ReceptiveFieldParams) -> float:
    """``exp(-lambda ||p - a||^2)`` inside the cutoff ``delta``, else 0."""
    return float(receptive_field_values(link, link_pose, v.p[None, :], params)[0])


@dataclass(frozen=True, eq=False)
class ContactModel:
    """Density over (link pose relative to a surface frame, curvature).

    ``density`` is ``None`` for an empty model (no features in range).
    """

    density: Density | None
    norm: float
    link: int
    source: str = ""

    @property
    def empty(self) -> bool:
        return self.density is None

    def __len__(self) -> int:
        return 0 if self.density is None else len(self.density)


def learn_contact_model(
    om: ObjectModel,
    link: LinkGeometry,
    link_pose: Pose,
    params: ReceptiveFieldParams,
    bandwidth: Bandwidth,
    link_id: int = 0,
) -> ContactModel:
    """Contact model of one link at the equilibrium pose ``link_pose``.

    Every object feature ``v_j`` with a non-zero receptive-field response
    contributes a particle at ``u_j = v_j^-1 o s`` carrying the feature's
    curvature, weighted by ``w_j * rf(v_j)``.  The norm is
    ``sum_j w_j rf(v_j) / sum_j w_j`` over all features.
    """
    d = om.density
    rf = receptive_field_values(link, link_pose, d.positions, params)
    contrib = d.weights * rf
    norm = float(contrib.sum() / d.weights.sum())
    keep = np.flatnonzero(contrib > 0)
    if len(keep) == 0:
        return ContactModel(None, 0.0, link_id, om.source_id)
    inv_p, inv_q = inverse_arrays(d.positions[keep], d.quats[keep])
    u_p, u_q = compose_arrays(inv_p, inv_q, link_pose.p, link_pose.q)
    density = Density(u_p, u_q, d.curvs[keep], contrib[keep], bandwidth)
    return ContactModel(density, norm, link_id, om.source_id)


def contact_model_norm(cm: ContactModel) -> float:
    return cm.norm


def select_contacts(norms, eta, zeta: float = DEFAULT_ZETA):
    """Per-example flags ``b[i, n]`` and per-link flags ``c[i]``.

    ``b[i, n] = N_L N_O ||M_in|| / sum ||M|| > eta_i`` and
    ``c[i] = mean_n b[i, n] > zeta``; both inequalities are strict.
    """
    norms = np.asarray(norms, dtype=float)
    if norms.ndim != 2:
        raise ValueError("norms must be a (links x examples) matrix")
    n_links, n_examples = norms.shape
    total = norms.sum()
    if not total > 0:
        raise NoContactsError("every contact-model norm is zero: no link touches any object")
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n_links,))
    ratio = n_links * n_examples * norms / total
    b = ratio > eta[:, None]
    c = b.mean(axis=1) > zeta
    return b, c


@dataclass(frozen=True, eq=False)
class GraspTypeContacts:
    b: np.ndarray
    c: np.ndarray
    models: dict[int, Density] = field(default_factory=dict)

    @property
    def links(self) -> list[int]:
        return sorted(self.models)


def mix_contact_models(per_example: Sequence[Sequence[ContactModel]], b, c) -> GraspTypeContacts:
    """Mixture contact model per selected link.

    ``per_example[n][i]`` is the model of link ``i`` learned on example ``n``.
    Each included example contributes its particles with weights scaled by
    ``1 / (number of included examples)``.
    """
    b = np.asarray(b, dtype=bool)
    c = np.asarray(c, dtype=bool)
    models: dict[int, Density] = {}
    for i in np.flatnonzero(c):
        parts = [per_example[n][i] for n in np.flatnonzero(b[i])]
        parts = [m for m in parts if not m.empty]
        if not parts:
            raise EmptyModelError(f"link {i} is selected but none of its included contact models has particles")
        scale = 1.0 / len(parts)
        dens = [m.density for m in parts]
        models[int(i)] = Density(
            np.concatenate([m.positions for m in dens]),
            np.concatenate([m.quats for m in dens]),
            np.concatenate([m.curvs for m in dens]),
            np.concatenate([m.weights * scale for m in dens]),
            dens[0].bandwidth,
        )
    return GraspTypeContacts(b, c, models)
