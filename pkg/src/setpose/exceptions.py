"""Exception types shared across the library."""


class SetPoseError(Exception):
    """Base class for all library errors."""


class DegenerateInput(SetPoseError):
    """Geometric input outside the domain of an operation (zero vector, parallel axes, ...)."""


class EmptyMesh(SetPoseError):
    """A mesh or point set with no vertices."""


class CardinalityError(SetPoseError):
    """More ground-truth objects than prediction slots, or malformed assignment shapes."""


class DegenerateBox(SetPoseError):
    """Bounding box with non-positive width or height."""


class EmptyInput(SetPoseError):
    """An aggregate asked of an empty collection."""


class ShapeError(SetPoseError):
    """Array shape incompatible with the operation."""


class GraphError(SetPoseError):
    """backward() requested without a recorded computation graph."""


class ParseError(SetPoseError):
    """Malformed input file; the message names the offending field or line."""


class BehindCamera(SetPoseError):
    """Point at or behind the camera plane cannot be projected."""


class ConfigError(SetPoseError):
    """Invalid or unknown configuration key/value."""
