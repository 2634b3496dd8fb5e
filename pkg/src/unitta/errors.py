"""Exception hierarchy shared by all modules."""


class UniTTAError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfig(UniTTAError, ValueError):
    pass


class ConstraintViolation(InvalidConfig):
    """A non-i.i.d. axis asks for more imbalance than its correlation allows.

    Raised when ``(1 - alpha1) * beta >= (n - 1) / n``; such axes can only be
    realized through quota masking.
    """


class DegenerateChain(UniTTAError, ValueError):
    pass


class NonConvergence(UniTTAError, RuntimeError):
    pass


class Exhausted(UniTTAError, RuntimeError):
    pass


class MissingPrevious(UniTTAError, LookupError):
    pass


class InsufficientData(UniTTAError, ValueError):
    pass


class ConfigMismatch(UniTTAError, ValueError):
    pass
