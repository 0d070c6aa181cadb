"""Exception types raised across the package."""


class OskfError(Exception):
    """Base class for all package errors."""


class DegenerateRotation(OskfError, ValueError):
    pass


class DegenerateDirection(OskfError, ValueError):
    pass


class InvalidCrop(OskfError, ValueError):
    pass


class BehindCamera(OskfError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InvalidK(OskfError, ValueError):
    pass


class TooFewPoints(OskfError, ValueError):
    pass


class EmptyModel(OskfError, ValueError):
    pass


class EmptyList(OskfError, ValueError):
    pass


class LengthMismatch(OskfError, ValueError):
    pass


class BadWidth(OskfError, ValueError):
    pass


class KeyMismatch(OskfError, ValueError):
    def __init__(self, message, missing_pred=(), missing_gt=()):
        super().__init__(message)
        self.missing_pred = list(missing_pred)
        self.missing_gt = list(missing_gt)


class DivergenceDetected(OskfError, RuntimeError):
    pass


class PlyError(OskfError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(OskfError, ValueError):
    """Malformed pyramid, checkpoint or JSON interchange file."""
