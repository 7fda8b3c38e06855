"""Exception hierarchy shared by every module."""


class V2XNoiseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(V2XNoiseError, ValueError):
    pass


class FrameError(V2XNoiseError):
    """Coordinate frames of two operands do not line up."""


class DegenerateOrientationError(V2XNoiseError):
    """Gimbal lock in angle extraction, or a rotation of pi in the SE(3) log."""


class ParseError(V2XNoiseError):
    """Malformed input file.

    ``location`` is a byte offset for binary payloads and a line number for
    text formats; ``field`` names the offending key when known.
    """

    def __init__(self, message, path=None, location=None, field=None):
        self.path = None if path is None else str(path)
        self.location = location
        self.field = field
        parts = [message]
        if field is not None:
            parts.append(f"field={field!r}")
        if location is not None:
            parts.append(f"at {location}")
        if path is not None:
            parts.append(f"in {self.path}")
        super().__init__(" ".join(parts))


class EmptyOverlapError(V2XNoiseError):
    """No point survived projection under both transforms."""


class VerificationError(V2XNoiseError):
    def __init__(self, message, divergences=()):
        self.divergences = list(divergences)
        super().__init__(message)
