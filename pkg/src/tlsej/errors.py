"""Exception types shared across the package."""


class TlsejError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TlsejError, ValueError):
    pass


class ShapeError(TlsejError, ValueError):
    pass


class WavFormatError(TlsejError, ValueError):
    """Raised for WAV files outside the supported 16-bit mono PCM layout."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class EstimationError(TlsejError, ValueError):
    pass


class ConfigError(TlsejError, ValueError):
    pass


class ParseError(TlsejError, ValueError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class NumericError(TlsejError, ArithmeticError):
    pass


class PretrainedLoadError(TlsejError, RuntimeError):
    pass
