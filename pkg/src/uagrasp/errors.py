"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class GraspError(Exception):
    """Base class for all library errors."""


class DataError(GraspError):
    """Input data could not be used (bad file, bad shape, bad value)."""


class PLYParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCloudError(DataError):
    pass


class DimensionError(DataError):
    pass


class JointLimitError(DataError):
    pass


class ArchiveVersionError(DataError):
    pass


class DegenerateError(GraspError):
    """A model became numerically degenerate (nothing left to work with)."""


class DegenerateConditionalError(DegenerateError):
    pass


class DegenerateQueryError(DegenerateError):
    pass


class DegenerateNeighborhoodError(DegenerateError):
    pass


class RankDeficientFitError(DegenerateError):
    pass


class EmptyModelError(DegenerateError):
    pass


class NoContactsError(DegenerateError):
    pass


class EmptyPopulationError(DegenerateError):
    pass
