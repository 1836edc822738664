"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class ParseError(ValueError):
    """A mesh file is malformed."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class NumericError(ArithmeticError):
    """A field evaluator produced non-finite values."""


class SolverError(RuntimeError):
    """The sparse factorization failed or the residual contract was violated."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)
