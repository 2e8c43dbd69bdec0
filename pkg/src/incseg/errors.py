"""Exception types shared across the engine."""


class FormatError(ValueError):
    """A binary or text artifact failed to parse or violates its layout."""


class DegenerateInputError(ValueError):
    """An operation received input with no defined result (e.g. a zero vector)."""
