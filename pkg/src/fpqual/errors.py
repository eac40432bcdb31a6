"""Exception types raised by fpqual."""


class FpqualError(Exception):
    """Base class for all fpqual errors."""


class FormatError(FpqualError, ValueError):
    """Image file is unreadable or in an unsupported format."""


class ConfigError(FpqualError, ValueError):
    """A configuration value is outside its valid range."""


class UndefinedOrientationError(FpqualError, ValueError):
    """A block has no usable ridge orientation (background or zero certainty)."""


class UndefinedStatisticError(FpqualError, ValueError):
    """A statistic cannot be computed, e.g. zero variance in the denominator."""


class UnattainableRateError(FpqualError, ValueError):
    """A fixed operating rate is finer than the sample count can resolve."""

    def __init__(self, alpha, n):
        self.alpha = alpha
        self.n = n
        self.min_rate = 1.0 / n if n else float("inf")
        super().__init__(
            f"rate {alpha:g} is unattainable with {n} samples "
            f"(minimum resolvable rate {self.min_rate:.6g})"
        )
