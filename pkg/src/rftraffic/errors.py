"""Exception hierarchy shared by every pipeline stage."""


class RfTrafficError(Exception):
    """Base class; ``stage`` names the pipeline stage that raised."""

    stage = "rftraffic"


# trace
class TraceError(RfTrafficError):
    stage = "trace"


class BadMagic(TraceError):
    pass


class Truncated(TraceError):
    pass


class DegenerateProfile(TraceError):
    pass


# framing
class FramingError(RfTrafficError):
    stage = "framing"


class StuffingViolation(FramingError):
    pass


class FcsMismatch(FramingError):
    pass


class Overrun(FramingError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


# channel
class ChannelError(RfTrafficError):
    stage = "channel"


class SignalTooShort(ChannelError):
    pass


# dataset
class DatasetError(RfTrafficError):
    stage = "dataset"


class TooShort(DatasetError):
    pass


class OutOfBounds(DatasetError):
    pass


class MisalignedStart(DatasetError):
    pass


class InsufficientData(DatasetError):
    def __init__(self, message, achievable=None):
        super().__init__(message)
        self.achievable = achievable


class SchemaMismatch(DatasetError):
    pass


class CorruptLength(DatasetError):
    pass


# neural
class NeuralError(RfTrafficError):
    stage = "neural"


class ShapeMismatch(NeuralError):
    pass


class Diverged(NeuralError):
    pass


# harness
class HarnessError(RfTrafficError):
    stage = "harness"


class InsufficientClasses(HarnessError):
    pass


class ConfigError(HarnessError):
    stage = "config"


class StageError(HarnessError):
    """A non-library exception raised while a named pipeline stage was running."""

    def __init__(self, stage, cause):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
