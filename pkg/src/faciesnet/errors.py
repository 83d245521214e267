"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions disagree with what an operation requires."""


class NumericError(ArithmeticError):
    """Non-finite values reached an operation boundary."""


class DataFormatError(ValueError):
    """Malformed input file (CSV, checkpoint, adjacency table)."""


class ConfigError(ValueError):
    """Invalid configuration value or key."""


class MissingLabelsError(ValueError):
    """Labeled data was required but labels are absent."""
