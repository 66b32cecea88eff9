"""
Exception types shared across the package.

Each maps onto one failure class the CLI knows how to report.
"""


class FawError(Exception):
    """base for every error raised on purpose by this package"""


class InvalidArgument(FawError, ValueError):
    """bad dimensions, non-finite inputs, out-of-range parameters"""


class NumericalFailure(FawError, ArithmeticError):
    """singular systems, failed decompositions, bisection that cannot bracket"""


class PreconditionViolation(FawError, RuntimeError):
    """an operation called in a state it does not support"""


class ProtocolViolation(FawError, RuntimeError):
    """stale or out-of-order message between CU and DUs"""
