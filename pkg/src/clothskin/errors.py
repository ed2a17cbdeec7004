"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    """A file could not be parsed; message carries the line number."""


class NumericError(ArithmeticError):
    """A numeric operation produced NaN/Inf or otherwise broke down."""


class TrainingDiverged(NumericError):
    """Training loss became non-finite or blew past the divergence guard."""
