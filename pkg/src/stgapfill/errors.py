"""Exception and warning types shared across the package."""


class DimMismatch(ValueError):
    """Cube and mask (or two cubes) disagree in their (T, C, H, W) dims."""


class NonBinaryMask(ValueError):
    """A mask cube contains entries other than 0 and 1."""


class IndivisibleSize(ValueError):
    """Patch size does not divide the spatial dimensions."""


class ShapeMismatch(ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class OddDimension(ValueError):
    """Positional encoding requires an even token dimension."""


class EmptyRegion(ValueError):
    """Metric requested over a region containing no pixels."""


class TooSmall(ValueError):
    """Image smaller than the metric's window."""


class UnreachableCoverage(ValueError):
    """Gap generator cannot hit the requested coverage within tolerance."""


class FormatError(ValueError):
    """Cube file header or payload is malformed."""


class IoError(OSError):
    """File could not be read or written."""


class GraphError(RuntimeError):
    """Backward pass requested without a recorded forward graph."""


class NonFiniteLoss(ArithmeticError):
    """Training loss became NaN or infinite."""


class NonMonotonicScalesWarning(UserWarning):
    """Scale patch sizes are not ordered coarse to fine."""
