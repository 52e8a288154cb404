"""Exception hierarchy shared by all pipeline stages.

The CLI maps each family to a distinct exit code, so stages raise the most
specific class that applies.
"""


class VpnWaveError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(VpnWaveError, ValueError):
    """Invalid argument or configuration value."""


class DataError(VpnWaveError):
    """Input data cannot be used (malformed file, wrong shape, ...)."""


class PcapFormatError(DataError):
    """The capture file is not a readable classic pcap."""


class SchemaError(DataError):
    """An intermediate CSV/JSON file has an unexpected schema or version."""


class DimensionError(DataError, ValueError):
    """Feature dimensionality does not match what a model was trained on."""


class SplitError(DataError, ValueError):
    """The train/test split preconditions are not met."""


class TrainingError(VpnWaveError, RuntimeError):
    """Model training diverged or could not proceed."""
