"""Exception types shared by the oofsk modules."""


class OofskError(Exception):
    """Base class for every error raised on purpose by this package."""


class DomainError(OofskError, ValueError):
    """An argument lies outside the domain of the operation."""


class ChannelSpecError(DomainError):
    """The antenna channel description cannot be realized."""


class AnalyticScopeError(DomainError):
    """A closed-form result was requested for a case it does not cover."""


class ConvergenceError(OofskError, ArithmeticError):
    """A quadrature or root search did not reach its tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.message = message
        self.achieved = achieved

    def __str__(self):
        if self.achieved is None:
            return self.message
        return f"{self.message} (achieved error estimate {self.achieved:.3g})"


class ManifestError(OofskError):
    """A run manifest could not be parsed or failed validation."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.line = line

    def __str__(self):
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field is not None:
            where.append(f"field '{self.field}'")
        if not where:
            return self.message
        return f"{', '.join(where)}: {self.message}"
