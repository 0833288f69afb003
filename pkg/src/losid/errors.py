"""Exception types shared across the package.

The CLI maps these onto process exit codes (see cli.main): configuration
problems exit 1, data problems exit 2, numeric failures exit 3.
"""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class DatasetFormatError(Exception):
    """A dataset file is malformed, truncated, or has the wrong magic."""


class CheckpointError(Exception):
    """A model checkpoint file is malformed or inconsistent."""


class SingleClassError(ValueError):
    """An operation needs both classes but the scored set has only one."""


class NumericError(RuntimeError):
    """A numeric failure (non-finite gradient or cost) during training."""
