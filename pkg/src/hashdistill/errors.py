"""Exception types shared across the package."""


class HashDistillError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(HashDistillError, ValueError):
    """An argument violates a documented precondition (shape, range, finiteness)."""


class DegenerateInputError(HashDistillError, ValueError):
    """A vector is too close to zero for a cosine to be meaningful."""


class InvalidConfigError(HashDistillError, ValueError):
    """A configuration value is out of its legal range or names a missing field."""


class FormatError(HashDistillError, ValueError):
    """A file does not match the expected on-disk format or version."""
