"""Exception hierarchy shared across the pipeline."""


class BpShiftError(Exception):
    """Base class for all pipeline errors."""


class SignalError(BpShiftError):
    pass


class NoBeatsFound(SignalError):
    pass


class SignalTooShort(SignalError):
    pass


class ConstantSignal(SignalError):
    pass


class InsufficientLength(SignalError):
    pass


class InvalidSignal(SignalError):
    """Raised on ingestion when samples are empty or non-finite."""


class FiducialNotFound(SignalError):
    def __init__(self, which, message=None):
        self.which = which
        super().__init__(message or f"sdPPG fiducial {which!r} not found")


class DegenerateTiming(SignalError):
    pass


class NoValidBeats(SignalError):
    pass


class IndexOutOfRange(BpShiftError, IndexError):
    pass


class TooFewSegments(BpShiftError):
    pass


class InsufficientClassCount(BpShiftError):
    def __init__(self, label, have, need):
        self.label = label
        self.have = have
        self.need = need
        super().__init__(f"class {label} has {have} candidates, need {need}")


class TooFewExamples(BpShiftError):
    pass


class ShapeMismatch(BpShiftError, ValueError):
    pass


class InvalidSpec(BpShiftError, ValueError):
    pass


class MissingInitialBp(BpShiftError):
    pass


class DivergedLoss(BpShiftError, FloatingPointError):
    pass


class EmptyEvaluation(BpShiftError):
    pass


class InvalidConfig(BpShiftError, ValueError):
    pass


class ConfigError(BpShiftError, ValueError):
    def __init__(self, path, field, message):
        self.path = path
        self.field = field
        super().__init__(f"{path}: {field}: {message}")


class UsageError(BpShiftError):
    pass


class PatientOverlap(BpShiftError):
    """A patient appears in more than one of the train/val, Test-I and Test-II cohorts."""
