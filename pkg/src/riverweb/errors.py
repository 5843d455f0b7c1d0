"""Exception types shared across the package."""


class RiverwebError(Exception):
    pass


class DomainError(RiverwebError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class SearchCapExceeded(RiverwebError):
    """No open site found within the search cap on a row.

    For any sane ``p`` this signals a broken field rather than bad luck.
    """


class NotOpen(RiverwebError, ValueError):
    pass


class CapExceeded(RiverwebError):
    """Cluster length exceeded ``cap_L``; the sample is right-censored.

    ``partial`` holds the rows computed up to the cap.
    """

    def __init__(self, cap_L, partial=None):
        super().__init__(f"cluster length exceeds cap_L={cap_L}")
        self.cap_L = cap_L
        self.partial = partial


class LengthMismatch(RiverwebError, ValueError):
    pass


class WalkTooShort(RiverwebError, ValueError):
    pass


class InsufficientSamples(RiverwebError, ValueError):
    pass


class TableMissing(RiverwebError, LookupError):
    pass


class ConfigError(RiverwebError, ValueError):
    pass
