"""Exception types shared across the package."""


class FormatError(ValueError):
    """A binary file does not start with the expected magic or version."""


class TruncationError(ValueError):
    """Header and payload size of a binary file disagree."""


class NonFiniteError(ValueError):
    """NaN or infinity found where finite values are required."""


class DimensionError(ValueError):
    """Grid shapes that must agree do not."""


class IntegrationError(FloatingPointError):
    """The integrator was handed a non-finite force."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step
