"""Exception hierarchy shared across the package.

Everything raised on purpose derives from SurfclrError so the CLI can map
failures onto stable exit codes (validation -> 2, I/O -> 3, numerics -> 4).
"""


class SurfclrError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SurfclrError):
    """Invalid configuration value or combination."""


class SchemaError(ConfigurationError):
    """Malformed index file or config tree structure."""


class ParameterError(ConfigurationError):
    """Out-of-range argument passed to an operation."""


class ShapeError(SurfclrError):
    """Array shape or dtype violates an interface contract."""


class InputError(SurfclrError):
    """Input values out of contract (non-finite, wrong range)."""


class PairingError(SurfclrError):
    """Cross-modal batches whose sample ids do not line up."""


class ContractError(SurfclrError):
    """A documented precondition or invariant was violated."""


class ModalityError(SurfclrError):
    """Encoder modality does not match the requested use."""


class DataError(SurfclrError):
    """Dataset content is invalid (bad labels, value ranges)."""


class CoRegistrationError(DataError):
    """Rasters of one sample disagree on spatial dimensions."""


class IndexingError(SurfclrError):
    """Dataset index problems: missing files, empty index."""


class DataIOError(SurfclrError):
    """A raster or artifact could not be read or written."""


class CorruptionError(DataIOError):
    """Checkpoint blob failed size or hash verification."""


class NumericalError(SurfclrError):
    """Non-finite values encountered during optimization."""
