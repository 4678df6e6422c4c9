"""Exception hierarchy shared by all modules."""


class EftError(Exception):
    """Base class for all package errors."""


class DomainError(EftError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ContractError(EftError, ValueError):
    """Caller violated a precondition (shape, coverage, counts)."""


class ValidationError(EftError, ValueError):
    """Input data fails an invariant (weights, ranges, symmetry)."""


class ParseError(EftError, ValueError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySubspaceError(EftError, ArithmeticError):
    """No overlap eigenvalue survives regularization."""


class SearchError(EftError, RuntimeError):
    """A bounded search (bisection, budget, binary search) failed to conclude."""


class PreconditionError(EftError, ValueError):
    """Spectrum does not satisfy a method precondition (e.g. the SPE range condition)."""


class ConfigError(EftError, ValueError):
    """Experiment configuration is invalid; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
