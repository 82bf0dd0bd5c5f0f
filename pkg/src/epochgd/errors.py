"""Exception hierarchy for epochgd."""


class EpochGDError(Exception):
    """Base class for all library errors."""


class NonPositiveConstant(EpochGDError, ValueError):
    def __init__(self, field, value=None):
        self.field = field
        self.value = value
        super().__init__(f"{field} must be positive, got {value!r}")


class ZeroDimension(EpochGDError, ValueError):
    pass


class MissingOptimum(EpochGDError):
    pass


class DimensionMismatch(EpochGDError, ValueError):
    pass


class InvalidBox(EpochGDError, ValueError):
    pass


class NoConvergence(EpochGDError, RuntimeError):
    def __init__(self, max_iters):
        self.max_iters = max_iters
        super().__init__(f"no convergence within {max_iters} iterations")


class InfeasibleStart(EpochGDError, ValueError):
    pass


class MissingDelta(EpochGDError, ValueError):
    pass


class BudgetPreconditionWarning(UserWarning):
    """Epoch count exceeds 2G^2/(lambda*eps); the 20G^2/(lambda*eps) cap is not certified."""


class OracleBoundViolation(EpochGDError, AssertionError):
    """A stochastic subgradient exceeded the declared norm bound G."""


class OptimumOutsideDomain(EpochGDError, ValueError):
    pass


class ParseError(EpochGDError, ValueError):
    def __init__(self, line_no, reason):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class NonBinaryLabel(ParseError):
    pass


class EmptyDataset(EpochGDError, ValueError):
    pass


class ToleranceNotCertified(EpochGDError):
    pass


class InvalidDelta(EpochGDError, ValueError):
    pass


class EmptyInput(EpochGDError, ValueError):
    pass


class InsufficientPoints(EpochGDError, ValueError):
    pass


class NonPositiveValue(EpochGDError, ValueError):
    pass


class ConfigError(EpochGDError, ValueError):
    pass
