"""Versioned JSON archive of learned grasp models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ArchiveVersionError, DataError
from .geom import Bandwidth, Density
from .hand import ConfigModel, HandDescription, Trajectory

FORMAT_VERSION = 1


@dataclass(eq=False)
class GraspTypeModel:
    """Learned models of one grasp type."""

    type_id: str
    contacts: dict[int, Density]
    b: np.ndarray
    c: np.ndarray
    norms: np.ndarray
    config: ConfigModel
    trajectories: list[Trajectory]
    sources: list[str] = field(default_factory=list)

    @property
    def links(self) -> list[int]:
        return sorted(self.contacts)

    def seed_links(self) -> list[list[int]]:
        """Per example: selected links included for that example."""
        return [[i for i in self.links if self.b[i, n]] for n in range(self.b.shape[1])]


@dataclass(eq=False)
class ModelArchive:
    hand: HandDescription
    config: RunConfig
    types: list[GraspTypeModel]


def _density_to_dict(d: Density) -> dict:
    bw = d.bandwidth
    return {
        "bandwidth": [bw.sigma_p, bw.sigma_q, bw.sigma_r],
        "positions": d.positions.ravel().tolist(),
        "quats": d.quats.ravel().tolist(),
        "curvs": d.curvs.ravel().tolist(),
        "weights": d.weights.tolist(),
    }


def _density_from_dict(data: dict) -> Density:
    return Density(
        np.array(data["positions"], dtype=float).reshape(-1, 3),
        np.array(data["quats"], dtype=float).reshape(-1, 4),
        np.array(data["curvs"], dtype=float).reshape(-1, 2),
        np.array(data["weights"], dtype=float),
        Bandwidth(*data["bandwidth"]),
    )


def archive_to_dict(archive: ModelArchive) -> dict:
    types = []
    for t in archive.types:
        types.append(
            {
                "type": t.type_id,
                "sources": list(t.sources),
                "b": t.b.astype(int).tolist(),
                "c": t.c.astype(int).tolist(),
                "norms": t.norms.tolist(),
                "contacts": {str(i): _density_to_dict(d) for i, d in sorted(t.contacts.items())},
                "config_model": {"sigma": t.config.sigma, "means": t.config.means.tolist()},
                "trajectories": [tr.to_dict() for tr in t.trajectories],
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "hand": archive.hand.to_dict(),
        "config": archive.config.to_dict(),
        "types": types,
    }


def archive_from_dict(data: dict) -> ModelArchive:
    version = data.get("format_version") if isinstance(data, dict) else None
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(f"archive format version {version!r}, expected {FORMAT_VERSION}")
    try:
        hand = HandDescription.from_dict(data["hand"])
        config = RunConfig.from_dict(data["config"])
        types = []
        for t in data["types"]:
            contacts = {int(k): _density_from_dict(v) for k, v in t["contacts"].items()}
            for link in contacts:
                if not 0 <= link < hand.n_links:
                    raise DataError(f"archive references link {link}, hand has {hand.n_links}")
            types.append(
                GraspTypeModel(
                    type_id=str(t["type"]),
                    contacts=contacts,
                    b=np.array(t["b"], dtype=bool).reshape(hand.n_links, -1),
                    c=np.array(t["c"], dtype=bool),
                    norms=np.array(t["norms"], dtype=float).reshape(hand.n_links, -1),
                    config=ConfigModel(t["config_model"]["means"], t["config_model"]["sigma"]),
                    trajectories=[Trajectory.from_dict(tr) for tr in t["trajectories"]],
                    sources=list(t.get("sources", [])),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid archive: {exc}") from exc
    return ModelArchive(hand, config, types)


def dumps(archive: ModelArchive) -> str:
    return json.dumps(archive_to_dict(archive)) + "\n"


def save_archive(path: str | Path, archive: ModelArchive) -> None:
    Path(path).write_text(dumps(archive))


def load_archive(path: str | Path) -> ModelArchive:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read archive {path}: {exc}") from exc
    return archive_from_dict(data)
