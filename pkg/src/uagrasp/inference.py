"""Query densities, grasp seeding, reach trajectories and simulated annealing.

A grasp type at inference time is a :class:`TypeQuery`: one query density per
modelled link, the equilibrium configuration model and the training reach
trajectories.  Candidates are optimised against the product of the
configuration density and every query density evaluated at the link poses
given by forward kinematics.  The collision expert is only applied when
candidates are ranked at the selection checkpoints.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .contact import LinkGeometry
from .errors import DegenerateQueryError, EmptyPopulationError, JointLimitError
from .geom import (
    Density,
    Pose,
    compose_arrays,
    inverse_arrays,
    log_curv_kernel_matrix,
    log_pose_kernel_matrix,
    quat_angle,
    quat_exp,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    sample_antipodal_vmf,
)
from .hand import CloudIndex, ConfigModel, HandDescription, HandState, Trajectory, fk_arrays
from .object_model import ObjectModel

log = logging.getLogger(__name__)

DEFAULT_KQ = 500
DEFAULT_QUERY_SIGMA_P = 0.01
DEFAULT_QUERY_SIGMA_Q = 200.0
DEFAULT_BETA = 500.0
DEFAULT_SELECTION_SIGMA = (0.05, 0.5, 0.5)
SEED_RETRIES = 1000
CHUNK = 64


# ---------------------------------------------------------------------------
# Query densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QueryDensity:
    """Weighted world-frame link poses with a pose-only kernel."""

    positions: np.ndarray
    quats: np.ndarray
    weights: np.ndarray
    sigma_p: float
    sigma_q: float
    link: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) < 1:
            raise ValueError("a query density needs at least one kernel")
        for name in ("positions", "quats", "weights"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights)
        lw.flags.writeable = False
        object.__setattr__(self, "log_weights", lw)

    def __len__(self) -> int:
        return len(self.weights)

    def log_pdf(self, positions, quats) -> np.ndarray:
        lk = log_pose_kernel_matrix(positions, quats, self.positions, self.quats, self.sigma_p, self.sigma_q)
        return logsumexp(lk + self.log_weights[None, :], axis=1)

    def pdf(self, pose: Pose) -> float:
        return float(np.exp(self.log_pdf(pose.p[None, :], pose.q[None, :])[0]))

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.choice(len(self), size=n, p=self.weights)
        pos = self.positions[idx] + self.sigma_p * rng.standard_normal((n, 3))
        quat = sample_antipodal_vmf(rng, self.quats[idx], self.sigma_q)
        return pos, quat


def _row_cdf(log_w: np.ndarray):
    """Row-wise unnormalised CDFs of a log-weight matrix and the log row totals."""
    m = log_w.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    cdf = np.cumsum(np.exp(log_w - m), axis=1)
    with np.errstate(divide="ignore"):
        log_total = m[:, 0] + np.log(cdf[:, -1])
    return cdf, log_total


def _row_categorical(rng: np.random.Generator, cdf: np.ndarray) -> np.ndarray:
    """One index per row, drawn in proportion to the increments of ``cdf``."""
    u = rng.random(len(cdf)) * cdf[:, -1]
    idx = np.array([np.searchsorted(row, x, side="right") for row, x in zip(cdf, u)], dtype=int)
    return np.minimum(idx, cdf.shape[1] - 1)


def compute_query_density(
    cm: Density,
    om: ObjectModel | Density,
    k_q: int,
    rng: np.random.Generator,
    sigma_p: float = DEFAULT_QUERY_SIGMA_P,
    sigma_q: float = DEFAULT_QUERY_SIGMA_Q,
    link: int = 0,
) -> QueryDensity:
    """Compose a contact model with an object model by importance sampling.

    For each kernel: draw a surface feature ``(v, r)`` from the object model,
    draw a link pose ``u`` relative to the feature frame from the contact
    model conditioned on ``r``, place the kernel at ``s = v o u`` and weight
    it by the contact model's curvature marginal at ``r``.
    """
    if cm is None:
        raise DegenerateQueryError("contact model is empty")
    od = om.density if isinstance(om, ObjectModel) else om
    if k_q < 1:
        raise ValueError("K_Q must be at least 1")
    v_p, v_q, v_r, _ = od.sample_arrays(rng, k_q)
    bw = cm.bandwidth
    lw = log_curv_kernel_matrix(v_r, cm.curvs, bw.sigma_r) + cm.log_weights[None, :]
    cdf, log_marg = _row_cdf(lw)
    if not np.any(np.exp(log_marg) > 0.0):
        raise DegenerateQueryError("no curvature overlap between the object and the contact model")
    idx = _row_categorical(rng, cdf)
    u_p = cm.positions[idx] + bw.sigma_p * rng.standard_normal((k_q, 3))
    u_q = sample_antipodal_vmf(rng, cm.quats[idx], bw.sigma_q)
    s_p, s_q = compose_arrays(v_p, v_q, u_p, u_q)
    w = np.exp(log_marg - log_marg.max())
    w = w / w.sum()
    return QueryDensity(s_p, quat_normalize(s_q), w, sigma_p, sigma_q, link)


# ---------------------------------------------------------------------------
# Grasp types at inference time
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TypeQuery:
    """Everything inference needs about one grasp type on the query object."""

    type_id: str
    queries: dict[int, QueryDensity]
    config: ConfigModel
    trajectories: list[Trajectory]
    seed_links: list[list[int]] = field(default_factory=list)

    @property
    def links(self) -> list[int]:
        return sorted(self.queries)

    @property
    def n_q(self) -> int:
        return len(self.queries)


def build_type_query(
    type_id: str,
    contacts: dict[int, Density],
    om: ObjectModel,
    config: ConfigModel,
    trajectories: Sequence[Trajectory],
    seed_links: Sequence[Sequence[int]],
    k_q: int,
    seed: int,
    type_index: int = 0,
    sigma_p: float = DEFAULT_QUERY_SIGMA_P,
    sigma_q: float = DEFAULT_QUERY_SIGMA_Q,
) -> TypeQuery:
    queries = {}
    for link in sorted(contacts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, type_index, link)))
        queries[link] = compute_query_density(contacts[link], om, k_q, rng, sigma_p, sigma_q, link)
    return TypeQuery(type_id, queries, config, list(trajectories), [list(s) for s in seed_links])


# ---------------------------------------------------------------------------
# Seeding, trajectory selection and warping
# ---------------------------------------------------------------------------


def sample_config(config: ConfigModel, hand: HandDescription, rng: np.random.Generator) -> np.ndarray:
    for _ in range(SEED_RETRIES):
        h_c = config.sample(rng)
        if hand.within_limits(h_c)[0]:
            return h_c
    raise JointLimitError(f"no configuration within joint limits after {SEED_RETRIES} draws")


def seed_grasp(tq: TypeQuery, hand: HandDescription, rng: np.random.Generator, motor: float = 1.0) -> HandState:
    """Anchor a candidate on a query-density sample of a randomly chosen link."""
    n_ex = max(len(tq.seed_links), 1)
    ex = int(rng.integers(n_ex))
    choices = [l for l in (tq.seed_links[ex] if tq.seed_links else []) if l in tq.queries]
    if not choices:
        choices = tq.links
    link = choices[int(rng.integers(len(choices)))]
    s_p, s_q = tq.queries[link].sample(rng, 1)
    h_c = sample_config(tq.config, hand, rng)
    pos, quat = fk_arrays(hand, np.zeros(3), np.array([1.0, 0, 0, 0]), h_c)
    inv_p, inv_q = inverse_arrays(pos[0, link], quat[0, link])
    w_p, w_q = compose_arrays(s_p[0], s_q[0], inv_p, inv_q)
    return HandState(Pose(w_p, w_q), h_c, motor)


def state_distance_sq(state: HandState, wrist_p, wrist_q, configs, sigma=DEFAULT_SELECTION_SIGMA) -> np.ndarray:
    sp, sq, sc = sigma
    dp = np.sum((np.asarray(wrist_p) - state.wrist.p) ** 2, axis=-1)
    dq = quat_angle(np.asarray(wrist_q), state.wrist.q) ** 2
    dc = np.sum((np.asarray(configs) - state.config) ** 2, axis=-1)
    return dp / sp**2 + dq / sq**2 + dc / sc**2


def equilibrium_arrays(trajectories: Sequence[Trajectory]):
    """Stacked equilibrium wrist positions, orientations and configurations."""
    eq = [t.equilibrium for t in trajectories]
    return (
        np.array([e.wrist.p for e in eq]),
        np.array([e.wrist.q for e in eq]),
        np.array([e.config for e in eq]),
    )


def select_reach_trajectory(
    state: HandState,
    trajectories: Sequence[Trajectory],
    rng: np.random.Generator,
    sigma=DEFAULT_SELECTION_SIGMA,
    sigma_sel: float = 1.0,
    equilibria=None,
) -> int:
    """Index of a training trajectory drawn with Gaussian weights around ``state``.

    The squared distance to each training equilibrium is already scaled by
    the per-component ``sigma``; ``sigma_sel`` sets the width of the
    Gaussian in those units.
    """
    if len(trajectories) == 1:
        return 0
    eq_p, eq_q, eq_c = equilibrium_arrays(trajectories) if equilibria is None else equilibria
    d2 = state_distance_sq(state, eq_p, eq_q, eq_c, sigma)
    logits = -d2 / (2.0 * sigma_sel**2)
    p = np.exp(logits - logits.max())
    return int(rng.choice(len(p), p=p / p.sum()))


def warp_trajectory(traj: Trajectory, state: HandState) -> Trajectory:
    """Re-anchor a training trajectory on a candidate equilibrium.

    Wrist poses are expressed relative to the training equilibrium wrist and
    re-attached to the candidate's; the configuration offset is blended in
    linearly over the step index.  The final state is the candidate exactly.
    """
    eq = traj.equilibrium
    n = len(traj)
    inv_p, inv_q = inverse_arrays(eq.wrist.p, eq.wrist.q)
    rel_p, rel_q = compose_arrays(inv_p, inv_q, traj.wrist_p, traj.wrist_q)
    w_p, w_q = compose_arrays(state.wrist.p, state.wrist.q, rel_p, rel_q)
    alpha = np.arange(n) / (n - 1)
    delta = state.config - eq.config
    config = traj.config + alpha[:, None] * delta[None, :]
    w_p[-1] = state.wrist.p
    w_q[-1] = state.wrist.q
    config[-1] = state.config
    return Trajectory(traj.t, w_p, w_q, config, traj.motor)


# ---------------------------------------------------------------------------
# Likelihood factors
# ---------------------------------------------------------------------------


def log_grasp_factors(tq: TypeQuery, hand: HandDescription, wrist_p, wrist_q, configs):
    """Per-candidate ``(log C(h_c), sum_i log Q_i(k_i(h_w, h_c)))`` arrays."""
    configs = np.atleast_2d(configs)
    pos, quat = fk_arrays(hand, wrist_p, wrist_q, configs)
    log_c = tq.config.log_pdf(configs)
    log_q = np.zeros(len(configs))
    for link, q in tq.queries.items():
        log_q = log_q + q.log_pdf(pos[:, link], quat[:, link])
    return log_c, log_q


def grasp_likelihood(state: HandState, tq: TypeQuery, hand: HandDescription, *, log: bool = False) -> float:
    """``C(h_c) * prod_i Q_i(k_i(h_w, h_c))``, accumulated in log space."""
    log_c, log_q = log_grasp_factors(tq, hand, state.wrist.p[None], state.wrist.q[None], state.config[None])
    value = float(log_c[0] + log_q[0])
    return value if log else math.exp(value)


class CollisionScene:
    """Cloud with outward normals for the penetration surrogate."""

    def __init__(self, cloud, normals: np.ndarray):
        self.index = CloudIndex(cloud)
        normals = np.asarray(normals, dtype=float)
        ok = np.all(np.isfinite(normals), axis=1)
        self.points = cloud.points
        self.normals = np.where(ok[:, None], normals, 0.0)

    def _pairs(self, centers: np.ndarray, radius: float):
        """(cloud index, center index) pairs closer than ``radius``."""
        found = self.index.tree.sparse_distance_matrix(cKDTree(centers), radius, output_type="ndarray")
        return found["i"].astype(int), found["j"].astype(int)

    def _depths(self, geom: LinkGeometry, pos, rot, k, j) -> np.ndarray:
        local = np.einsum("nji,nj->ni", rot[k], self.points[j] - pos[k])
        inside = geom.signed_distance_local(local) < 0.0
        k, j, local = k[inside], j[inside], local[inside]
        n_local = np.einsum("nji,nj->ni", rot[k], self.normals[j])
        depth = np.einsum("ni,ni->n", n_local, local) - geom.support_min(n_local)
        out = np.zeros(len(pos))
        np.maximum.at(out, k, depth)
        return out

    def link_penetration(self, geom: LinkGeometry, pos: np.ndarray, quat: np.ndarray) -> np.ndarray:
        """Per-pose deepest excursion of the link behind the tangent plane of a cloud point inside it.

        ``pos`` and ``quat`` hold a batch of link poses; poses with no cloud
        point inside the link get 0.
        """
        pos = np.atleast_2d(pos)
        rot = quat_to_matrix(np.atleast_2d(quat))
        j, k = self._pairs(pos + rot @ geom.center, geom.bounding_radius)
        return self._depths(geom, pos, rot, k, j)


def penetration_depth(traj: Trajectory, scene: CollisionScene, hand: HandDescription) -> float:
    """Worst penetration of any link into the cloud over the whole trajectory."""
    pos, quat = fk_arrays(hand, traj.wrist_p, traj.wrist_q, traj.config)
    # A link often holds still for many states (the palm while the fingers
    # close, a frozen phalanx); each distinct pose is checked once.
    poses, centers, owner_state, owner_link = [], [], [], []
    radius = 0.0
    for i, link in enumerate(hand.links):
        rows = np.unique(np.concatenate([pos[:, i], quat[:, i]], axis=1), axis=0)
        rot = quat_to_matrix(rows[:, 3:])
        local, r = link.geometry.cover_spheres()
        radius = max(radius, r)
        poses.append((rows[:, :3], rot))
        centers.append((rows[:, None, :3] + np.einsum("nij,bj->nbi", rot, local)).reshape(-1, 3))
        owner_state.append(np.repeat(np.arange(len(rows)), len(local)))
        owner_link.append(np.full(len(rows) * len(local), i))
    cloud_idx, flat = scene._pairs(np.concatenate(centers), radius)
    state = np.concatenate(owner_state)[flat]
    link = np.concatenate(owner_link)[flat]
    worst = 0.0
    for i, l in enumerate(hand.links):
        sel = link == i
        if np.any(sel):
            depth = scene._depths(l.geometry, *poses[i], state[sel], cloud_idx[sel])
            worst = max(worst, float(depth.max()))
    return worst


def collision_expert(traj: Trajectory, scene: CollisionScene, hand: HandDescription, beta: float = DEFAULT_BETA) -> float:
    """``exp(-beta * d_pen)`` with ``d_pen`` the worst penetration along the trajectory."""
    return math.exp(-beta * penetration_depth(traj, scene, hand))


def expert_from_depth(d_pen: float, beta: float = DEFAULT_BETA) -> float:
    return math.exp(-beta * max(d_pen, 0.0))


def log_normalized(log_coll: float, log_config: float, log_query: float, n_q: int, n_max: int) -> float:
    """``log(L_coll * L_C * L_Q^(N_max / N_Q))``."""
    if n_q < 1:
        raise ValueError("a grasp type needs at least one query density")
    return log_coll + log_config + (n_max / n_q) * log_query


def normalized_likelihood(l_coll: float, l_config: float, l_query: float, n_q: int, n_max: int) -> float:
    with np.errstate(divide="ignore"):
        logs = np.log([l_coll, l_config, l_query])
    return math.exp(log_normalized(*logs, n_q, n_max))


# ---------------------------------------------------------------------------
# Candidates and annealing
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GraspCandidate:
    id: int
    type_index: int
    type_id: str
    state: HandState
    trajectory: Trajectory | None = None
    traj_index: int = 0
    log_config: float = -math.inf
    log_query: float = -math.inf
    log_coll: float = 0.0
    log_norm: float = -math.inf

    @property
    def log_raw(self) -> float:
        return self.log_coll + self.log_config + self.log_query

    @property
    def likelihood(self) -> float:
        return math.exp(self.log_raw)

    @property
    def normalized(self) -> float:
        return math.exp(self.log_norm)


@dataclass(frozen=True)
class AnnealParams:
    steps: int = 100
    t_first: float = 1.0
    t_last: float = 0.01
    sigma_pos: float = 0.005
    sigma_rot: float = 0.05
    sigma_joint: float = 0.05
    selection_steps: tuple[int, ...] = (1, 50)
    retain: float = 0.1
    beta: float = DEFAULT_BETA
    selection_sigma: tuple[float, float, float] = DEFAULT_SELECTION_SIGMA
    workers: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("annealing needs at least one step")
        if not (self.t_first > 0 and self.t_last > 0):
            raise ValueError("temperatures must be positive")
        if min(self.sigma_pos, self.sigma_rot, self.sigma_joint) < 0:
            raise ValueError("proposal scales must be non-negative")
        if not 0 < self.retain <= 1:
            raise ValueError("retained fraction must lie in (0, 1]")

    def temperature(self, k: int) -> float:
        if self.steps == 1:
            return self.t_first
        return self.t_first + (self.t_last - self.t_first) * (k - 1) / (self.steps - 1)


def candidate_rng(seed: int, cid: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, cid)))


class Annealer:
    """Population annealing with staged selection.

    Each candidate owns a random stream derived from the master seed and its
    id, and its Metropolis chain never reads another candidate's state, so
    the split of candidates across worker threads does not change results.
    """

    def __init__(self, types: Sequence[TypeQuery], hand: HandDescription, scene: CollisionScene | None,
                 params: AnnealParams, seed: int):
        self.types = list(types)
        self.hand = hand
        self.scene = scene
        self.params = params
        self.seed = seed
        self.n_max = max(t.n_q for t in self.types)
        self.rngs: dict[int, np.random.Generator] = {}
        self._equilibria: dict[int, tuple] = {}

    def rng(self, cid: int) -> np.random.Generator:
        if cid not in self.rngs:
            self.rngs[cid] = candidate_rng(self.seed, cid)
        return self.rngs[cid]

    # -- construction ----------------------------------------------------

    def seed_population(self, size: int) -> list[GraspCandidate]:
        if size < 1:
            raise EmptyPopulationError("population size must be positive")
        cands = []
        for cid in range(size):
            ti = cid % len(self.types)
            tq = self.types[ti]
            rng = self.rng(cid)
            motor = float(tq.trajectories[0].equilibrium.motor) if tq.trajectories else 1.0
            state = seed_grasp(tq, self.hand, rng, motor)
            cands.append(GraspCandidate(cid, ti, tq.type_id, state))
        self._score_raw(cands)
        return cands

    def _score_raw(self, cands: Sequence[GraspCandidate]) -> None:
        by_type: dict[int, list[GraspCandidate]] = {}
        for c in cands:
            by_type.setdefault(c.type_index, []).append(c)
        for ti, group in by_type.items():
            log_c, log_q = log_grasp_factors(
                self.types[ti],
                self.hand,
                np.array([c.state.wrist.p for c in group]),
                np.array([c.state.wrist.q for c in group]),
                np.array([c.state.config for c in group]),
            )
            for c, lc, lq in zip(group, log_c, log_q):
                c.log_config = float(lc)
                c.log_query = float(lq)

    # -- one Metropolis step ----------------------------------------------

    def _step_chunk(self, cands: Sequence[GraspCandidate], temperature: float) -> None:
        p = self.params
        proposals = []
        for c in cands:
            rng = self.rng(c.id)
            dp = p.sigma_pos * rng.standard_normal(3)
            omega = p.sigma_rot * rng.standard_normal(3)
            dc = p.sigma_joint * rng.standard_normal(self.hand.dof)
            log_u = math.log(rng.random() or np.finfo(float).tiny)
            w = c.state.wrist
            q_new = quat_normalize(quat_mul(w.q, quat_exp(omega / 2.0)))
            proposals.append((w.p + dp, q_new, c.state.config + dc, log_u))
        by_type: dict[int, list[int]] = {}
        for k, c in enumerate(cands):
            by_type.setdefault(c.type_index, []).append(k)
        for ti, members in by_type.items():
            configs = np.array([proposals[k][2] for k in members])
            ok = self.hand.within_limits(configs)
            log_c, log_q = log_grasp_factors(
                self.types[ti],
                self.hand,
                np.array([proposals[k][0] for k in members]),
                np.array([proposals[k][1] for k in members]),
                configs,
            )
            for j, k in enumerate(members):
                c = cands[k]
                if not ok[j]:
                    continue
                new = float(log_c[j] + log_q[j])
                old = c.log_config + c.log_query
                if new == -math.inf:
                    continue
                if old == -math.inf or proposals[k][3] < (new - old) / temperature:
                    c.state = HandState(Pose(proposals[k][0], proposals[k][1]), proposals[k][2], c.state.motor)
                    c.log_config = float(log_c[j])
                    c.log_query = float(log_q[j])

    def step(self, cands: Sequence[GraspCandidate], temperature: float) -> None:
        chunks = [cands[i : i + CHUNK] for i in range(0, len(cands), CHUNK)]
        if self.params.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.params.workers) as pool:
                list(pool.map(lambda ch: self._step_chunk(ch, temperature), chunks))
        else:
            for ch in chunks:
                self._step_chunk(ch, temperature)

    # -- selection --------------------------------------------------------

    def attach(self, c: GraspCandidate) -> None:
        """Pick and warp a reach trajectory; the collision factor is left at 1."""
        tq = self.types[c.type_index]
        if c.type_index not in self._equilibria:
            self._equilibria[c.type_index] = equilibrium_arrays(tq.trajectories)
        c.traj_index = select_reach_trajectory(
            c.state, tq.trajectories, self.rng(c.id), self.params.selection_sigma,
            equilibria=self._equilibria[c.type_index],
        )
        c.trajectory = warp_trajectory(tq.trajectories[c.traj_index], c.state)
        c.log_coll = 0.0
        c.log_norm = log_normalized(0.0, c.log_config, c.log_query, tq.n_q, self.n_max)

    def collide(self, c: GraspCandidate) -> None:
        if self.scene is None or self.params.beta == 0 or c.log_norm == -math.inf:
            return
        c.log_coll = -self.params.beta * penetration_depth(c.trajectory, self.scene, self.hand)
        tq = self.types[c.type_index]
        c.log_norm = log_normalized(c.log_coll, c.log_config, c.log_query, tq.n_q, self.n_max)

    def checkpoint(self, cands: list[GraspCandidate], elite: dict[int, GraspCandidate], prune: bool):
        """Score with the collision expert, fall back to elites that were better, rank, prune.

        The collision factor never exceeds 1, so the score without it bounds
        the full score from above.  Candidates are scored in order of that
        bound and the scan stops once no remaining bound can reach the
        retained set; the result equals scoring everyone.
        """
        for c in cands:
            self.attach(c)
        keep = max(1, math.ceil(self.params.retain * len(cands))) if prune else len(cands)
        order = sorted(cands, key=lambda c: (-c.log_norm, c.id))
        scored: list[GraspCandidate] = []
        for c in order:
            if len(scored) >= keep:
                kth = sorted(scored, key=lambda x: (-x.log_norm, x.id))[keep - 1]
                if (-c.log_norm, c.id) > (-kth.log_norm, kth.id):
                    break
            best = elite.get(c.id)
            if best is not None and best.log_norm >= c.log_norm:
                # The bound already loses to the elite: no need to score.
                c.__dict__.update(replace(best).__dict__)
            else:
                self.collide(c)
                if best is not None and best.log_norm > c.log_norm:
                    c.__dict__.update(replace(best).__dict__)
            scored.append(c)
        alive = [c for c in scored if c.log_norm > -math.inf]
        if not alive:
            raise EmptyPopulationError("every candidate has zero likelihood")
        ranked = sorted(alive, key=lambda c: (-c.log_norm, c.id))[:keep]
        for c in ranked:
            elite[c.id] = replace(c)
        return ranked

    def run(self, cands: list[GraspCandidate], history: list[float] | None = None) -> list[GraspCandidate]:
        p = self.params
        elite: dict[int, GraspCandidate] = {}
        for k in range(1, p.steps + 1):
            self.step(cands, p.temperature(k))
            if k in p.selection_steps:
                cands = self.checkpoint(cands, elite, prune=True)
                if history is not None:
                    history.append(cands[0].log_norm)
        cands = self.checkpoint(cands, elite, prune=False)
        if history is not None:
            history.append(cands[0].log_norm)
        return cands


def anneal(
    population: list[GraspCandidate],
    types: Sequence[TypeQuery],
    hand: HandDescription,
    scene: CollisionScene | None,
    params: AnnealParams,
    seed: int,
    history: list[float] | None = None,
) -> list[GraspCandidate]:
    if not population:
        raise EmptyPopulationError("cannot anneal an empty population")
    return Annealer(types, hand, scene, params, seed).run(list(population), history)


def rank_and_prune(cands: Sequence[GraspCandidate], bounds=None) -> list[GraspCandidate]:
    """Drop candidates whose wrist path leaves ``bounds = (lo, hi)``; sort by normalised likelihood."""
    keep = list(cands)
    if bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)

        def inside(c: GraspCandidate) -> bool:
            pts = c.trajectory.wrist_p if c.trajectory is not None else c.state.wrist.p[None]
            return bool(np.all((pts >= lo) & (pts <= hi)))

        keep = [c for c in keep if inside(c)]
    return sorted(keep, key=lambda c: (-c.log_norm, c.id))
