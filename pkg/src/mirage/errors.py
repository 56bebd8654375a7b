"""Exception hierarchy shared by every module in the package."""


class MirageError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(MirageError, ValueError):
    pass


class InvalidAlphabet(MirageError, ValueError):
    pass


class InvalidRule(MirageError, ValueError):
    pass


class GenerationExhausted(MirageError, RuntimeError):
    pass


class OutOfRange(MirageError, ValueError):
    pass


class TemplateMismatch(MirageError, ValueError):
    pass


class UnsupportedTransfer(MirageError, ValueError):
    pass


class ParseError(MirageError, ValueError):
    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class FormatError(MirageError, ValueError):
    pass


class ArityError(MirageError, ValueError):
    pass


class ProposerFailure(MirageError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class EmptyInput(MirageError, ValueError):
    pass


class UndefinedCR(MirageError, ZeroDivisionError):
    pass


class UndefinedDensity(MirageError, ZeroDivisionError):
    pass


class SchemaError(MirageError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(MirageError, ValueError):
    pass


class TransportError(MirageError, RuntimeError):
    pass


class CacheCorruption(MirageError, RuntimeError):
    pass
