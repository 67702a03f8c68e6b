"""Run configuration: every tunable with its default, loaded from JSON."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .contact import ReceptiveFieldParams
from .errors import DataError
from .geom import Bandwidth
from .inference import AnnealParams


@dataclass(frozen=True)
class RunConfig:
    # receptive field and contact selection
    lam: float = 2500.0
    delta: float = 0.04
    eta: float = 0.5
    zeta: float = 0.5
    # kernel bandwidths (position m, rotation concentration, curvature 1/m)
    object_bandwidth: tuple[float, float, float] = (0.005, 200.0, 5.0)
    contact_bandwidth: tuple[float, float, float] = (0.005, 200.0, 5.0)
    query_bandwidth: tuple[float, float] = (0.01, 200.0)
    sigma_hc: float = 0.1
    # features and models
    k_nn: int = 20
    particle_cap: int = 5000
    k_q: int = 500
    # annealing
    population: int = 1000
    steps: int = 100
    t_first: float = 1.0
    t_last: float = 0.01
    sigma_pos: float = 0.005
    sigma_rot: float = 0.05
    sigma_joint: float = 0.05
    selection_steps: tuple[int, ...] = (1, 50)
    retain: float = 0.1
    workers: int = 1
    # ranking
    beta: float = 500.0
    selection_sigma: tuple[float, float, float] = (0.05, 0.5, 0.5)
    workspace: tuple[tuple[float, float, float], tuple[float, float, float]] | None = None
    # closing generator
    contact_threshold: float = 0.002
    closing_rate: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("object_bandwidth", "contact_bandwidth", "query_bandwidth", "selection_sigma", "selection_steps"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.workspace is not None:
            ws = tuple(tuple(float(v) for v in row) for row in self.workspace)
            if len(ws) != 2 or any(len(row) != 3 for row in ws) or any(a > b for a, b in zip(*ws)):
                raise DataError("workspace must be [[xmin, ymin, zmin], [xmax, ymax, zmax]]")
            object.__setattr__(self, "workspace", ws)
        positive = ["lam", "delta", "sigma_hc", "t_first", "t_last", "contact_threshold", "closing_rate"]
        for name in positive:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise DataError(f"{name} must be a positive number, got {value!r}")
        for name in ("eta", "zeta", "beta", "sigma_pos", "sigma_rot", "sigma_joint"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value >= 0 and math.isfinite(value)):
                raise DataError(f"{name} must be a non-negative number, got {value!r}")
        for name in ("k_nn", "particle_cap", "k_q", "population", "steps", "workers"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value >= 1):
                raise DataError(f"{name} must be a positive integer, got {value!r}")
        if self.k_nn < 6:
            raise DataError("k_nn must be at least 6 for the curvature fit")
        if not 0 < self.retain <= 1:
            raise DataError("retain must lie in (0, 1]")
        for name, size in (("object_bandwidth", 3), ("contact_bandwidth", 3), ("query_bandwidth", 2), ("selection_sigma", 3)):
            values = getattr(self, name)
            if len(values) != size or not all(v > 0 and math.isfinite(v) for v in values):
                raise DataError(f"{name} needs {size} positive values")

    @property
    def receptive_field(self) -> ReceptiveFieldParams:
        return ReceptiveFieldParams(self.lam, self.delta)

    @property
    def object_bw(self) -> Bandwidth:
        return Bandwidth(*self.object_bandwidth)

    @property
    def contact_bw(self) -> Bandwidth:
        return Bandwidth(*self.contact_bandwidth)

    @property
    def anneal_params(self) -> AnnealParams:
        return AnnealParams(
            steps=self.steps,
            t_first=self.t_first,
            t_last=self.t_last,
            sigma_pos=self.sigma_pos,
            sigma_rot=self.sigma_rot,
            sigma_joint=self.sigma_joint,
            selection_steps=self.selection_steps,
            retain=self.retain,
            beta=self.beta,
            selection_sigma=self.selection_sigma,
            workers=self.workers,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DataError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise DataError(f"invalid configuration: {exc}") from exc


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read configuration {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError("configuration file must hold a JSON object")
    return RunConfig.from_dict(data)
