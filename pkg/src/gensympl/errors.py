"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
certification failures with 3 and numerical failures with 4.
"""


class ValidationError(ValueError):
    """Bad input: malformed problem file, out-of-range parameter, ..."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems else [message]


class CertificationError(RuntimeError):
    """A form failed condition (star) or the derived (star-star) bounds."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class NumericalError(RuntimeError):
    """A numerical procedure could not meet its contract."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class DomainError(NumericalError):
    """Evaluation requested outside the region where a field is defined."""
