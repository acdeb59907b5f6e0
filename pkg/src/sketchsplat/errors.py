"""Exception types shared across the package."""


class SketchSplatError(Exception):
    """Base class for all package errors."""


class InvalidPrimitiveError(SketchSplatError):
    """A Gaussian primitive violates its invariants (scale, quaternion, ranges)."""


class DimensionError(SketchSplatError):
    """Mismatched shapes, channel counts, or resolutions."""


class ContractViolationError(SketchSplatError):
    """A caller-supplied object (hook result, index set, ...) broke an API contract."""


class InputError(SketchSplatError):
    """Undecodable or malformed external input (images, JSON, flags)."""


class StorageError(SketchSplatError):
    """Persistence layer failure (unreadable path, corrupt container)."""


class CapacityError(SketchSplatError):
    """A configured resource cap was reached."""


class BusyError(SketchSplatError):
    """A serialized resource is already held by another writer."""
