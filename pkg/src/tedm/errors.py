"""Exception hierarchy shared across the package."""


class TedmError(Exception):
    """Base class for all package errors."""


class InvalidSchedule(TedmError):
    pass


class InvalidTimestep(TedmError):
    pass


class ShapeError(TedmError):
    pass


class ModelError(TedmError):
    pass


class UnsupportedResize(TedmError):
    pass


class StorageError(TedmError):
    pass


class FormatError(TedmError):
    pass


class EmptyDataset(TedmError):
    pass


class DivergedTraining(TedmError):
    pass


class MixedStepError(TedmError):
    pass


class EmptyGroup(TedmError):
    pass


class RangeError(TedmError):
    pass


class InvalidSpec(TedmError):
    pass


class DegenerateIntensity(TedmError):
    pass


class DegenerateVariance(TedmError):
    pass


class BudgetError(TedmError):
    pass


class ConfigError(TedmError):
    pass


class ManifestError(TedmError):
    pass


class StageError(TedmError):
    """Pipeline stage failure; carries the failing stage's name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
