from enum import Enum


class GevbevError(Exception):
    """Base class for every domain error raised by the library."""


class ScenarioError(GevbevError, ValueError):
    pass


class NoObservableCentersError(GevbevError, ValueError):
    def __init__(self, message: str = "no observable centers"):
        super().__init__(message)


class NoTargetsError(GevbevError, ValueError):
    def __init__(self, message: str = "zero observed targets survived sampling"):
        super().__init__(message)


class FitDivergenceError(GevbevError, ArithmeticError):
    pass


class FrameMismatchError(GevbevError, ValueError):
    pass


class SpecialFunctionDomainError(GevbevError, ValueError):
    pass


class EdlInputError(GevbevError, ValueError):
    pass


class EmptyCurveError(GevbevError, ValueError):
    pass


class CpmErrorKind(str, Enum):
    BAD_MAGIC = "bad_magic"
    BAD_VERSION = "bad_version"
    TRUNCATED = "truncated"
    TRAILING_BYTES = "trailing_bytes"
    BAD_LAYER = "bad_layer"
    BAD_CELL = "bad_cell"


class CpmDecodeError(GevbevError, ValueError):
    def __init__(self, kind: CpmErrorKind, message: str):
        super().__init__(f"{kind.value}: {message}")
        self.kind = kind
