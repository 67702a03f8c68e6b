"""Learning and transferring equilibrium grasps for underactuated hands."""

from __future__ import annotations

from .errors import DataError, DegenerateError, GraspError
from .geom import Bandwidth, Density, Feature, Pose

__all__ = ["Bandwidth", "DataError", "DegenerateError", "Density", "Feature", "GraspError", "Pose"]
