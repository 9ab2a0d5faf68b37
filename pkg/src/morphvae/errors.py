"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError / FormatError -> 3, TrainingError / MetricError -> 4.
"""


class ShapeError(ValueError):
    """Array shapes do not conform for the requested operation."""


class GraphError(RuntimeError):
    """Gradient-tape misuse, e.g. backward from a non-scalar root."""


class DataError(ValueError):
    """Invalid generator input: unknown symbol, angle out of range, too few classes."""


class PlacementError(DataError):
    """A translation pushed part of the object off the canvas."""


class FusionError(DataError):
    """A fused cube set does not form a single face-connected component."""


class FormatError(ValueError):
    """Malformed file content (volume, checkpoint or affinity files)."""


class ConfigError(ValueError):
    """Invalid run configuration or command usage."""


class MetricError(ArithmeticError):
    """A similarity metric produced a non-finite value."""


class TrainingError(RuntimeError):
    """Training diverged or produced non-finite gradients."""
