"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto process exit codes, so raising the right class
matters: ConfigError -> 2, DataError -> 3, TrainingError -> 4.
"""


class RoadstressError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RoadstressError):
    """Invalid configuration, unknown option, or malformed config file."""


class DataError(RoadstressError):
    """Missing or inconsistent input data (manifests, masks, signals)."""


class TrainingError(RoadstressError):
    """Model training failed (non-finite loss, empty partition, ...)."""
