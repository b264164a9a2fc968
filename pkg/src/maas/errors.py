from __future__ import annotations


class MaasError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(MaasError, ValueError):
    pass


class HorizonError(MaasError, IndexError):
    """A period index falls outside a machine's commitment horizon."""


class InvalidRangeError(MaasError, ValueError):
    pass


class UnknownLabelError(MaasError, KeyError):
    pass


class MissingAttributeError(MaasError, KeyError):
    pass


class MalformedProgramError(MaasError, ValueError):
    pass


class BudgetError(MaasError, RuntimeError):
    """Combined-graph enumeration would exceed the configured edge budget."""


class NoSupplierError(MaasError, ValueError):
    pass


class PolicyViolationError(MaasError, ValueError):
    pass


class InvalidUtilityError(MaasError, ValueError):
    pass


class ShapeError(MaasError, ValueError):
    pass
