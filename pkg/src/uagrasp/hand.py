"""Hand kinematics, underactuation and reach-to-grasp trajectories.

A hand is a tree of links rooted at the palm (link 0).  Each non-palm link
hangs off its parent through a fixed mounting pose followed by a revolute
joint.  A single motor drives every joint through a synergy vector; in free
space the joints follow ``clip(synergy * h_m)`` while contact freezes them,
which is what makes the equilibrium configuration depend on the object.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .contact import LinkGeometry
from .errors import DataError, DimensionError, JointLimitError
from .geom import LOG_2PI, Pose, compose_arrays, quat_conj, quat_from_axis_angle, quat_mul, quat_rotate
from .surface import PointCloud

LIMIT_TOL = 1e-12
DEFAULT_CONTACT_THRESHOLD = 0.002
DEFAULT_CLOSING_RATE = 0.02
DEFAULT_CONFIG_SIGMA = 0.1


@dataclass(frozen=True, eq=False)
class LinkSpec:
    name: str
    parent: int
    mount: Pose
    joint_axis: np.ndarray | None
    limits: tuple[float, float]
    geometry: LinkGeometry


class HandDescription:
    """Immutable kinematic description of an underactuated hand."""

    def __init__(self, links: Sequence[LinkSpec], synergy: Sequence[float]):
        links = tuple(links)
        if not links or links[0].parent != -1 or links[0].joint_axis is not None:
            raise DataError("link 0 must be the palm: no parent and no joint")
        for i, link in enumerate(links[1:], start=1):
            if not 0 <= link.parent < i:
                raise DataError(f"link {i} ({link.name}) must have an earlier parent, got {link.parent}")
            if link.joint_axis is None:
                raise DataError(f"link {i} ({link.name}) needs a joint axis")
        self.links = links
        self.joint_links = tuple(i for i, l in enumerate(links) if l.joint_axis is not None)
        self.link_joint = {link: j for j, link in enumerate(self.joint_links)}
        synergy = np.array(synergy, dtype=float).reshape(-1)
        if synergy.shape != (len(self.joint_links),) or not np.all(np.isfinite(synergy)):
            raise DataError(f"synergy needs {len(self.joint_links)} finite coefficients")
        synergy.flags.writeable = False
        self.synergy = synergy
        self.lower = np.array([links[i].limits[0] for i in self.joint_links])
        self.upper = np.array([links[i].limits[1] for i in self.joint_links])
        if np.any(self.lower > self.upper):
            raise DataError("joint limits must satisfy lower <= upper")
        self._axes = np.array([links[i].joint_axis for i in self.joint_links]).reshape(-1, 3)
        # Joints whose motion moves link i (its own and its ancestors').
        self.chain_joints = []
        for i in range(len(links)):
            joints = []
            k = i
            while k > 0:
                joints.append(self.link_joint[k])
                k = links[k].parent
            self.chain_joints.append(tuple(sorted(joints)))

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def dof(self) -> int:
        return len(self.joint_links)

    def within_limits(self, h_c: np.ndarray) -> np.ndarray:
        h_c = np.atleast_2d(h_c)
        return np.all((h_c >= self.lower - LIMIT_TOL) & (h_c <= self.upper + LIMIT_TOL), axis=1)

    # -- serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        links = []
        for link in self.links:
            links.append(
                {
                    "name": link.name,
                    "parent": link.parent,
                    "mount_pose": link.mount.to_array().tolist(),
                    "joint_axis": None if link.joint_axis is None else np.asarray(link.joint_axis).tolist(),
                    "limits": list(link.limits),
                    "geometry": {"type": link.geometry.kind, "dims": list(link.geometry.dims)},
                }
            )
        return {"links": links, "synergy": self.synergy.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> HandDescription:
        try:
            links = []
            for entry in data["links"]:
                axis = entry.get("joint_axis")
                if axis is not None:
                    axis = np.asarray(axis, dtype=float)
                    axis = axis / np.linalg.norm(axis)
                limits = entry.get("limits") or [0.0, 0.0]
                geom = entry["geometry"]
                links.append(
                    LinkSpec(
                        name=str(entry["name"]),
                        parent=int(entry["parent"]),
                        mount=Pose.from_array(entry["mount_pose"]),
                        joint_axis=axis,
                        limits=(float(limits[0]), float(limits[1])),
                        geometry=LinkGeometry(geom["type"], tuple(geom["dims"])),
                    )
                )
            return cls(links, data["synergy"])
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DataError(f"invalid hand description: {exc}") from exc


def load_hand(path: str | Path) -> HandDescription:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read hand description {path}: {exc}") from exc
    return HandDescription.from_dict(data)


def save_hand(path: str | Path, hand: HandDescription) -> None:
    Path(path).write_text(json.dumps(hand.to_dict(), indent=2) + "\n")


def default_hand() -> HandDescription:
    """Palm plus two opposed two-phalanx fingers, one motor, D = 4.

    The wrist z axis is the approach direction; the palm box spans
    z in [0, 0.02] and the fingers extend along +z from its front face and
    curl towards each other.
    """
    half_pi = math.pi / 2.0
    identity_q = [1.0, 0.0, 0.0, 0.0]
    palm = LinkSpec("palm", -1, Pose([0, 0, 0.01], identity_q), None, (0.0, 0.0), LinkGeometry("box", (0.03, 0.11, 0.02)))
    links = [palm]
    for side, sign in (("left", 1.0), ("right", -1.0)):
        axis = np.array([sign, 0.0, 0.0])
        base = len(links)
        links.append(
            LinkSpec(f"{side}_proximal", 0, Pose([0, sign * 0.045, 0.01], identity_q), axis, (0.0, half_pi),
                     LinkGeometry("capsule", (0.008, 0.04)))
        )
        links.append(
            LinkSpec(f"{side}_distal", base, Pose([0, 0, 0.04], identity_q), axis, (0.0, half_pi),
                     LinkGeometry("capsule", (0.008, 0.03)))
        )
    return HandDescription(links, [1.0, 1.0, 1.0, 1.0])


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------


def fk_arrays(hand: HandDescription, wrist_p, wrist_q, h_c):
    """Batch forward kinematics without limit checks.

    Returns link positions ``(N, L, 3)`` and quaternions ``(N, L, 4)``.
    """
    wrist_p = np.atleast_2d(np.asarray(wrist_p, dtype=float))
    wrist_q = np.atleast_2d(np.asarray(wrist_q, dtype=float))
    h_c = np.atleast_2d(np.asarray(h_c, dtype=float))
    n = h_c.shape[0]
    wrist_p = np.broadcast_to(wrist_p, (n, 3))
    wrist_q = np.broadcast_to(wrist_q, (n, 4))
    pos = np.empty((n, hand.n_links, 3))
    quat = np.empty((n, hand.n_links, 4))
    for i, link in enumerate(hand.links):
        if link.parent < 0:
            pp, pq = wrist_p, wrist_q
        else:
            pp, pq = pos[:, link.parent], quat[:, link.parent]
        p, q = compose_arrays(pp, pq, link.mount.p, link.mount.q)
        if link.joint_axis is not None:
            j = hand.link_joint[i]
            q = quat_mul(q, quat_from_axis_angle(hand._axes[j], h_c[:, j]))
        pos[:, i] = p
        quat[:, i] = q
    return pos, quat


def check_config(hand: HandDescription, h_c) -> np.ndarray:
    h_c = np.asarray(h_c, dtype=float).reshape(-1)
    if h_c.shape != (hand.dof,):
        raise DimensionError(f"configuration has {h_c.size} values, hand has {hand.dof} joints")
    if not hand.within_limits(h_c)[0]:
        raise JointLimitError(f"configuration {h_c.tolist()} violates joint limits")
    return h_c


def forward_kinematics(hand: HandDescription, h_w: Pose, h_c) -> list[Pose]:
    """World pose of every link for wrist pose ``h_w`` and joint vector ``h_c``."""
    h_c = check_config(hand, h_c)
    pos, quat = fk_arrays(hand, h_w.p, h_w.q, h_c)
    return [Pose(pos[0, i], quat[0, i]) for i in range(hand.n_links)]


def synergy_targets(hand: HandDescription, h_m: float) -> np.ndarray:
    """Free-space joint targets ``clip(synergy * h_m, limits)``."""
    if not 0.0 <= h_m <= 1.0:
        raise ValueError("motor signal must lie in [0, 1]")
    return np.clip(hand.synergy * h_m, hand.lower, hand.upper)


# ---------------------------------------------------------------------------
# States and trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HandState:
    wrist: Pose
    config: np.ndarray
    motor: float

    def __post_init__(self):
        cfg = np.array(self.config, dtype=float).reshape(-1)
        cfg.flags.writeable = False
        object.__setattr__(self, "config", cfg)
        object.__setattr__(self, "motor", float(self.motor))


class Trajectory:
    """Time-indexed hand states ending in the equilibrium state."""

    def __init__(self, t, wrist_p, wrist_q, config, motor):
        self.t = np.asarray(t, dtype=float).reshape(-1)
        n = len(self.t)
        self.wrist_p = np.asarray(wrist_p, dtype=float).reshape(n, 3)
        self.wrist_q = np.asarray(wrist_q, dtype=float).reshape(n, 4)
        self.config = np.asarray(config, dtype=float).reshape(n, -1)
        self.motor = np.asarray(motor, dtype=float).reshape(n)
        if n < 2:
            raise DataError("a trajectory needs at least two states")
        for a in (self.t, self.wrist_p, self.wrist_q, self.config, self.motor):
            a.flags.writeable = False

    def __len__(self) -> int:
        return len(self.t)

    @property
    def equilibrium_index(self) -> int:
        return len(self.t) - 1

    def state(self, k: int) -> HandState:
        return HandState(Pose(self.wrist_p[k], self.wrist_q[k]), self.config[k], self.motor[k])

    @property
    def equilibrium(self) -> HandState:
        return self.state(self.equilibrium_index)

    def to_dict(self) -> dict:
        states = []
        for k in range(len(self)):
            states.append(
                {
                    "t": float(self.t[k]),
                    "hw": np.concatenate([self.wrist_p[k], self.wrist_q[k]]).tolist(),
                    "hc": self.config[k].tolist(),
                    "hm": float(self.motor[k]),
                }
            )
        return {"equilibrium": self.equilibrium_index, "states": states}

    @classmethod
    def from_dict(cls, data: dict) -> Trajectory:
        try:
            states = data["states"]
            hw = np.array([s["hw"] for s in states], dtype=float)
            return cls(
                [s["t"] for s in states],
                hw[:, :3],
                hw[:, 3:7],
                [s["hc"] for s in states],
                [s["hm"] for s in states],
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DataError(f"invalid trajectory: {exc}") from exc


def load_trajectory(path: str | Path) -> Trajectory:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read trajectory {path}: {exc}") from exc
    return Trajectory.from_dict(data)


def save_trajectory(path: str | Path, traj: Trajectory) -> None:
    Path(path).write_text(json.dumps(traj.to_dict()) + "\n")


# ---------------------------------------------------------------------------
# Equilibrium configuration model
# ---------------------------------------------------------------------------


class ConfigModel:
    """Uniform mixture of isotropic D-variate Gaussians, one per training example."""

    def __init__(self, means, sigma: float = DEFAULT_CONFIG_SIGMA):
        means = np.array(means, dtype=float)
        if means.ndim != 2 or len(means) < 1:
            raise ValueError("need at least one equilibrium configuration")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        means.flags.writeable = False
        self.means = means
        self.sigma = float(sigma)

    def __len__(self) -> int:
        return len(self.means)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_pdf(self, h_c) -> np.ndarray:
        h_c = np.atleast_2d(np.asarray(h_c, dtype=float))
        diff = h_c[:, None, :] - self.means[None, :, :]
        sq = np.sum(diff * diff, axis=-1)
        d = self.dim
        log_comp = -0.5 * d * (LOG_2PI + 2.0 * math.log(self.sigma)) - sq / (2.0 * self.sigma**2)
        return logsumexp(log_comp, axis=1) - math.log(len(self))

    def pdf(self, h_c) -> np.ndarray:
        return np.exp(self.log_pdf(h_c))

    @property
    def mean(self) -> np.ndarray:
        return self.means.mean(axis=0)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        size = 1 if n is None else n
        comp = rng.integers(len(self), size=size)
        out = self.means[comp] + self.sigma * rng.standard_normal((size, self.dim))
        return out[0] if n is None else out


def build_config_model(configs, sigma: float = DEFAULT_CONFIG_SIGMA) -> ConfigModel:
    return ConfigModel(configs, sigma)


# ---------------------------------------------------------------------------
# Kinematic closing (training data generator)
# ---------------------------------------------------------------------------


class CloudIndex:
    """Point cloud with a k-d tree, used for link/cloud proximity queries."""

    def __init__(self, cloud: PointCloud, normals: np.ndarray | None = None):
        self.cloud = cloud
        self.points = cloud.points
        self.tree = cKDTree(cloud.points)
        self.normals = normals

    def link_distance(self, geom: LinkGeometry, pos: np.ndarray, quat: np.ndarray, cutoff: float = 0.05) -> float:
        """Signed distance from the link surface to the closest cloud point.

        Returns ``inf`` when no point lies within ``cutoff`` of the link.
        """
        center = pos + quat_rotate(quat, geom.center)
        idx = self.tree.query_ball_point(center, geom.bounding_radius + cutoff)
        if not idx:
            return math.inf
        local = quat_rotate(quat_conj(quat), self.points[idx] - pos)
        return float(geom.signed_distance_local(local).min())


def close_against_cloud(
    hand: HandDescription,
    wrist_poses: Sequence[Pose],
    motor: Sequence[float],
    cloud: PointCloud | CloudIndex,
    threshold: float = DEFAULT_CONTACT_THRESHOLD,
    rate: float = DEFAULT_CLOSING_RATE,
    max_extra_steps: int | None = None,
) -> Trajectory:
    """Kinematic stand-in for a physics rollout of an underactuated grasp.

    At each step every unfrozen joint moves towards its synergy target by at
    most ``rate``; a link coming within ``threshold`` of the cloud freezes its
    own joint and every joint upstream of it.  The rollout follows the given
    wrist/motor sequence, then holds the last command until every joint is
    frozen or at target.  It also stops as soon as every joint is frozen.
    """
    motor = np.asarray(motor, dtype=float)
    if len(wrist_poses) != len(motor) or len(motor) < 1:
        raise DataError("wrist and motor sequences must have the same non-zero length")
    index = cloud if isinstance(cloud, CloudIndex) else CloudIndex(cloud)
    if max_extra_steps is None:
        span = float(np.max(hand.upper - hand.lower)) if hand.dof else 0.0
        max_extra_steps = int(math.ceil(span / rate)) + 1

    config = synergy_targets(hand, motor[0]).copy()
    frozen = np.zeros(hand.dof, dtype=bool)
    rows = []

    def contacts(wp: Pose, cfg: np.ndarray) -> None:
        pos, quat = fk_arrays(hand, wp.p, wp.q, cfg)
        for i, link in enumerate(hand.links):
            joints = hand.chain_joints[i]
            if not joints or np.all(frozen[list(joints)]):
                continue
            if index.link_distance(link.geometry, pos[0, i], quat[0, i], threshold) < threshold:
                frozen[list(joints)] = True

    n_cmd = len(motor)
    step = 0
    while True:
        k = min(step, n_cmd - 1)
        wp = wrist_poses[k]
        target = synergy_targets(hand, motor[k])
        if step > 0:
            move = np.clip(target - config, -rate, rate)
            config = np.where(frozen, config, config + move)
        contacts(wp, config)
        rows.append((float(step), wp, config.copy(), motor[k]))
        at_target = np.abs(config - target) <= 1e-12
        done_cmd = step >= n_cmd - 1
        if np.all(frozen) or (done_cmd and np.all(frozen | at_target)):
            break
        if step >= n_cmd - 1 + max_extra_steps:
            break
        step += 1

    if len(rows) == 1:
        rows.append((1.0, rows[0][1], rows[0][2], rows[0][3]))
    if not np.any(frozen):
        warnings.warn("closing reached equilibrium without touching the cloud", RuntimeWarning, stacklevel=2)
    traj = Trajectory(
        [r[0] for r in rows],
        [r[1].p for r in rows],
        [r[1].q for r in rows],
        [r[2] for r in rows],
        [r[3] for r in rows],
    )
    traj.frozen = frozen.copy()
    return traj
