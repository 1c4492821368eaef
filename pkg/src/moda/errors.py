"""Exception types shared across the package."""


class ModaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ModaError):
    """Invalid or inconsistent configuration."""


class ShapeError(ModaError):
    """Array shape mismatch."""


class ContractError(ModaError):
    """An operation was called outside its valid protocol, e.g. stepping a
    finished episode or running backward before forward."""


class TrainingError(ModaError):
    """Training produced a non-finite loss or gradient."""


class MiningError(ModaError):
    """Triplet mining yielded no usable triplets."""


class SharingError(ModaError):
    """The sharing gate cannot be formed, e.g. fewer than two anchors."""


class DatasetError(ModaError):
    """Malformed or inconsistent dataset file."""


class CheckpointError(ModaError):
    """Malformed checkpoint or shape mismatch on load."""


class HarnessError(ModaError):
    """Pipeline orchestration failure, e.g. a missing upstream artifact."""
