"""Exception types shared across the package."""


class MpgLabError(Exception):
    """Base class for package errors."""


class EnumerationCapError(MpgLabError):
    """Joint-action space is too large for the exact (dense) code path."""


class GameValidationError(MpgLabError):
    """A game or policy failed validation."""


class MisconfigurationError(MpgLabError):
    """A run was configured inconsistently with the game it operates on."""
