"""Exception types shared across the package."""


class CrowdAttnError(Exception):
    """Base class for all package errors."""


class UsageError(CrowdAttnError):
    """Bad flags, config keys, or argument combinations."""


class DataFormatError(CrowdAttnError):
    """Malformed input data, windows, or checkpoint files."""


class ShapeError(CrowdAttnError):
    """Incompatible tensor shapes passed to a primitive."""

    def __init__(self, op, lhs_shape, rhs_shape=None):
        self.op = op
        self.lhs_shape = tuple(lhs_shape)
        self.rhs_shape = None if rhs_shape is None else tuple(rhs_shape)
        if self.rhs_shape is None:
            msg = "%s: unsupported operand shape %s" % (op, self.lhs_shape)
        else:
            msg = "%s: incompatible shapes %s and %s" % (
                op, self.lhs_shape, self.rhs_shape)
        super().__init__(msg)


class GraphError(CrowdAttnError):
    """Structural misuse of a tape or spatio-temporal graph."""


class NumericalError(CrowdAttnError):
    """Non-finite values where finite ones are required."""
