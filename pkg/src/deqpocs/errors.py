"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input tensor contains NaN/Inf or is otherwise malformed."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A requested configuration is infeasible or inconsistent."""


class DivergenceError(RuntimeError):
    """A fixed-point iteration produced a non-finite iterate."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class TrainingError(RuntimeError):
    """Training failed (non-finite gradients, diverging solve, ...)."""


class CertificateError(RuntimeError):
    """A contraction certificate is missing, invalid, or >= 1."""
