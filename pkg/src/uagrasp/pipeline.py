"""Training and inference orchestration shared by the CLI and the tests."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .archive import GraspTypeModel, ModelArchive
from .config import RunConfig
from .contact import learn_contact_model, mix_contact_models, select_contacts
from .errors import DegenerateQueryError, EmptyModelError, NoContactsError
from .geom import Pose, quat_from_axis_angle, quat_mul, quat_rotate
from .hand import (
    CloudIndex,
    HandDescription,
    Trajectory,
    build_config_model,
    close_against_cloud,
    fk_arrays,
)
from .inference import (
    Annealer,
    CollisionScene,
    GraspCandidate,
    TypeQuery,
    build_type_query,
    rank_and_prune,
)
from .object_model import build_object_model
from .surface import PointCloud, estimate_normals, extract_features

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Example:
    cloud: PointCloud
    trajectory: Trajectory
    grasp_type: str = "default"
    source: str = ""


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def object_model_for(cloud: PointCloud, config: RunConfig, source: str = "", stream: int = 0):
    features = extract_features(cloud, config.k_nn)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2, stream)))
    return build_object_model(features, config.object_bw, source, config.particle_cap, rng)


def learn_example(hand: HandDescription, ex: Example, config: RunConfig, stream: int = 0):
    """Per-link contact models of one example at its equilibrium state."""
    om = object_model_for(ex.cloud, config, ex.source, stream)
    eq = ex.trajectory.equilibrium
    pos, quat = fk_arrays(hand, eq.wrist.p, eq.wrist.q, eq.config)
    return [
        learn_contact_model(om, link.geometry, Pose(pos[0, i], quat[0, i]), config.receptive_field, config.contact_bw, i)
        for i, link in enumerate(hand.links)
    ]


def train(hand: HandDescription, examples: Sequence[Example], config: RunConfig) -> ModelArchive:
    """Learn one set of contact models and a configuration model per grasp type."""
    if not examples:
        raise ValueError("training needs at least one example")
    per_example = [learn_example(hand, ex, config, n) for n, ex in enumerate(examples)]
    types = []
    for label in sorted({ex.grasp_type for ex in examples}):
        members = [n for n, ex in enumerate(examples) if ex.grasp_type == label]
        models = [per_example[n] for n in members]
        norms = np.array([[m[i].norm for m in models] for i in range(hand.n_links)])
        try:
            b, c = select_contacts(norms, config.eta, config.zeta)
        except NoContactsError as exc:
            raise NoContactsError(f"grasp type {label!r}: {exc}") from exc
        if not np.any(c):
            raise NoContactsError(f"grasp type {label!r}: every link was rejected by contact selection")
        mixed = mix_contact_models(models, b, c)
        for i in range(hand.n_links):
            flags = "".join("1" if f else "0" for f in b[i])
            log.info("type %s link %d norms %s b=%s c=%d", label, i, np.round(norms[i], 4).tolist(), flags, c[i])
        config_model = build_config_model(
            [examples[n].trajectory.equilibrium.config for n in members], config.sigma_hc
        )
        types.append(
            GraspTypeModel(
                type_id=label,
                contacts=mixed.models,
                b=b,
                c=c,
                norms=norms,
                config=config_model,
                trajectories=[examples[n].trajectory for n in members],
                sources=[examples[n].source for n in members],
            )
        )
    return ModelArchive(hand, config, types)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class InferenceResult:
    candidates: list[GraspCandidate]
    types: list[TypeQuery]
    history: list[float]
    scene: CollisionScene


def query_types(archive: ModelArchive, cloud: PointCloud, config: RunConfig) -> list[TypeQuery]:
    om = object_model_for(cloud, config, "query", stream=10**6)
    out = []
    for ti, t in enumerate(archive.types):
        try:
            out.append(
                build_type_query(
                    t.type_id, t.contacts, om, t.config, t.trajectories, t.seed_links(),
                    config.k_q, config.seed, ti, *config.query_bandwidth,
                )
            )
        except DegenerateQueryError as exc:
            warnings.warn(f"grasp type {t.type_id!r} skipped: {exc}", RuntimeWarning, stacklevel=2)
    if not out:
        raise DegenerateQueryError("no grasp type has curvature overlap with the query object")
    return out


def infer(archive: ModelArchive, cloud: PointCloud, config: RunConfig | None = None) -> InferenceResult:
    config = archive.config if config is None else config
    hand = archive.hand
    types = query_types(archive, cloud, config)
    scene = CollisionScene(cloud, estimate_normals(cloud, config.k_nn, skip_degenerate=True))
    annealer = Annealer(types, hand, scene, config.anneal_params, config.seed)
    population = annealer.seed_population(config.population)
    history: list[float] = []
    ranked = annealer.run(population, history)
    ranked = rank_and_prune(ranked, config.workspace)
    if not ranked:
        warnings.warn("no candidate survived ranking", RuntimeWarning, stacklevel=2)
    return InferenceResult(ranked, types, history, scene)


def candidate_to_dict(c: GraspCandidate, rank: int) -> dict:
    s = c.state
    return {
        "rank": rank,
        "grasp_type": c.type_id,
        "wrist": s.wrist.to_array().tolist(),
        "joints": s.config.tolist(),
        "motor": s.motor,
        "log_likelihood": c.log_raw,
        "likelihood": c.likelihood,
        "log_normalized_likelihood": c.log_norm,
        "normalized_likelihood": c.normalized,
        "collision_expert": math.exp(c.log_coll),
        "trajectory": c.trajectory.to_dict() if c.trajectory is not None else None,
    }


# ---------------------------------------------------------------------------
# Scripted top-down grasps (training data)
# ---------------------------------------------------------------------------


def approach_orientation(yaw: float = 0.0, tilt: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    """Wrist orientation: approach axis straight down, turned by ``yaw`` about world z,
    then tilted by ``tilt = (about x, about y)`` in the world frame."""
    q = quat_from_axis_angle([1.0, 0.0, 0.0], math.pi)
    q = quat_mul(quat_from_axis_angle([0.0, 0.0, 1.0], yaw), q)
    q = quat_mul(quat_from_axis_angle([0.0, 1.0, 0.0], tilt[1]), q)
    return quat_mul(quat_from_axis_angle([1.0, 0.0, 0.0], tilt[0]), q)


def scripted_grasp(
    hand: HandDescription,
    cloud: PointCloud | CloudIndex,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    yaw: float = 0.0,
    tilt: Sequence[float] = (0.0, 0.0),
    standoff: float = 0.015,
    palm_depth: float = 0.02,
    approach: float = 0.1,
    descent_steps: int = 20,
    ramp_steps: int = 40,
    threshold: float = 0.002,
    rate: float = 0.02,
) -> Trajectory:
    """Move the wrist along its approach axis towards ``center``, then ramp the motor 0 to 1.

    The approach line passes through ``center``; the wrist stops when the
    palm face (``palm_depth`` ahead of the wrist) is ``standoff`` short of
    the outermost cloud point within 3 cm of the line.
    """
    index = cloud if isinstance(cloud, CloudIndex) else CloudIndex(cloud)
    q = approach_orientation(yaw, tilt)
    axis = quat_rotate(q, np.array([0.0, 0.0, 1.0]))
    center = np.asarray(center, dtype=float)
    rel = index.points - center
    along = rel @ axis
    radial = np.linalg.norm(rel - along[:, None] * axis, axis=1)
    near = radial < 0.03
    surface = float(-(along[near] if np.any(near) else along).min())
    final = surface + palm_depth + standoff
    dist = np.concatenate([np.linspace(final + approach, final, descent_steps), np.full(ramp_steps, final)])
    motor = np.concatenate([np.zeros(descent_steps), np.linspace(0.0, 1.0, ramp_steps + 1)[1:]])
    wrists = [Pose(center - d * axis, q) for d in dist]
    return close_against_cloud(hand, wrists, motor, index, threshold, rate)
