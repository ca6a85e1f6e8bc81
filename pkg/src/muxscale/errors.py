"""Exception types shared across the package."""


class MuxscaleError(Exception):
    """Base class for all muxscale errors."""


class DimensionError(MuxscaleError, ValueError):
    """Shapes or sizes are incompatible with the requested operation."""


class FormatError(MuxscaleError, ValueError):
    """A file does not conform to its expected format.

    ``offset`` is the byte position at which the problem was detected,
    or None when no position applies.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TraceError(MuxscaleError, ValueError):
    """An activation trace does not match the model or input it is used with."""


class UnsupportedLayerError(MuxscaleError, ValueError):
    """A layer kind is not supported by the requested operation."""


class NumericError(MuxscaleError, ArithmeticError):
    """A non-finite value (NaN/Inf) was produced where finite values are required."""
