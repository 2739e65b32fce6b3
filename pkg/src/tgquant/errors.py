"""Exception types raised across the package."""


class TGQError(Exception):
    """Base class for all library errors."""


class ParseError(TGQError):
    pass


class UnsupportedFormat(TGQError):
    pass


class IoError(TGQError, OSError):
    pass


class InvalidRadius(TGQError, ValueError):
    pass


class NonFiniteInput(TGQError, ValueError):
    pass


class RangeError(TGQError, ValueError):
    pass


class CorruptPayload(TGQError):
    pass


class ShapeError(TGQError, ValueError):
    pass


class InvalidMask(TGQError, ValueError):
    pass


class GridError(TGQError, ValueError):
    pass


class EmptyCalibration(TGQError, ValueError):
    pass


class ConfigError(TGQError, ValueError):
    pass
