"""Exception hierarchy shared across the package."""


class DMTSError(Exception):
    """Base class for every error raised by dismsts."""


class DimensionError(DMTSError, ValueError):
    pass


class KernelTooLargeError(DimensionError):
    pass


class EmptyOutputError(DimensionError):
    pass


class RankError(DMTSError, ValueError):
    pass


class LabelError(DMTSError, ValueError):
    pass


class StateError(DMTSError, RuntimeError):
    pass


class ParameterError(DMTSError, ValueError):
    pass


class ConfigurationError(ParameterError):
    pass


class DepthError(ParameterError):
    def __init__(self, message: str, max_depth: int):
        super().__init__(message)
        self.max_depth = max_depth


class DataError(DMTSError, ValueError):
    pass


class CorruptionError(DataError):
    pass


class VersionError(DataError):
    pass


class InputError(DMTSError, ValueError):
    pass


class DivergenceError(DMTSError, ArithmeticError):
    def __init__(self, message: str, step: int, last_finite=None):
        super().__init__(message)
        self.step = step
        self.last_finite = last_finite
