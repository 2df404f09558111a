"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes that must agree do not."""


class InputError(ValueError):
    """Input values violate a documented precondition (non-finite, negative, ...)."""


class CapacityError(ValueError):
    """More label masks than available instance slots."""


class ConsistencyError(ValueError):
    """A mask index points at a mask that does not exist."""


class BundleError(Exception):
    """A scene bundle on disk is missing or malformed."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
