"""Exception types shared across the package."""


class RayliftError(Exception):
    """Base class for all raylift errors."""


class InvalidInputError(RayliftError, ValueError):
    """Malformed or out-of-contract input (shapes, NaNs, empty masks, ...)."""


class CalibrationError(RayliftError, ValueError):
    """Camera calibration violates its invariants (non-orthonormal R, bad K)."""


class BehindCameraError(RayliftError):
    """A point to be projected lies at or behind the camera plane."""


class InsufficientViewsError(RayliftError):
    """Fewer usable views than the operation requires."""


class DegenerateGeometryError(RayliftError):
    """Geometric configuration without a unique solution (parallel rays,
    coincident camera centers, rank-deficient triangulation system)."""


class DatasetParseError(RayliftError):
    """Malformed dataset record; message names the failing record index."""


class ConfigError(RayliftError, ValueError):
    """Invalid configuration value or file."""


class TrainingDivergedError(RayliftError):
    """Training aborted on a non-finite loss; message carries diagnostics."""
