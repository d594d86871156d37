"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class NumericsError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class DatasetError(ValueError):
    """A dataset manifest or tensor file failed validation."""


class CheckpointError(ValueError):
    """A checkpoint failed to load or does not match the expected config."""
