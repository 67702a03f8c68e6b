"""Object models: uniform-weight kernel densities over a cloud's surface features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyModelError
from .geom import Bandwidth, Density
from .surface import SurfaceFeatureSet

DEFAULT_PARTICLE_CAP = 5000


@dataclass(frozen=True, eq=False)
class ObjectModel:
    density: Density
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.density)


def build_object_model(
    features: SurfaceFeatureSet,
    bandwidth: Bandwidth,
    source_id: str = "",
    cap: int | None = None,
    rng: np.random.Generator | None = None,
) -> ObjectModel:
    """One particle per feature, all weights ``1/K``.

    With ``cap`` set, a uniform subsample of at most ``cap`` features is kept
    (without replacement, drawn from ``rng``).
    """
    if len(features) == 0:
        raise EmptyModelError("cannot build an object model from an empty feature set")
    pos, quat, curv = features.arrays()
    if cap is not None and len(pos) > cap:
        rng = np.random.default_rng(0) if rng is None else rng
        keep = np.sort(rng.choice(len(pos), size=cap, replace=False))
        pos, quat, curv = pos[keep], quat[keep], curv[keep]
    k = len(pos)
    return ObjectModel(Density(pos, quat, curv, np.full(k, 1.0 / k), bandwidth), source_id)
