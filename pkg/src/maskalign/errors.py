"""Exception hierarchy shared across the package."""


class MaskAlignError(Exception):
    """Base class for all library errors."""


class ShapeError(MaskAlignError, ValueError):
    """Dimension or contract violation between array arguments."""


class ConfigError(MaskAlignError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class CheckpointError(MaskAlignError):
    """Base class for checkpoint file problems."""


class FormatError(CheckpointError):
    """File does not start with the expected magic or is malformed."""


class VersionError(CheckpointError):
    """File carries an unsupported format version."""


class CorruptionError(CheckpointError):
    """File is truncated or has inconsistent lengths."""


class DataError(MaskAlignError):
    """Dataset directory or file contents are invalid."""


class TrainingDiverged(MaskAlignError):
    """Loss became non-finite during training."""
