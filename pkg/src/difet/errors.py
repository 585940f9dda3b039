"""Exception hierarchy shared by every difet module."""


class DifetError(Exception):
    """Base class for all errors raised by difet."""


class InvalidParameterError(DifetError, ValueError):
    pass


class InvalidInputError(DifetError, ValueError):
    pass


class ImageDecodeError(DifetError, ValueError):
    """An encoded image payload could not be decoded."""


class BundleFormatError(DifetError):
    pass


class BundleCorruptionError(BundleFormatError):
    pass


class UnsupportedVersionError(BundleFormatError):
    pass


class ProtocolError(DifetError):
    pass


class KeypointFileError(DifetError, ValueError):
    """Malformed keypoint file; ``lineno`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, lineno: int = 0):
        super().__init__(f"line {lineno}: {message}" if lineno else message)
        self.lineno = lineno


class JobError(DifetError):
    pass
