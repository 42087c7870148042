"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class MeshParseError(ValueError):
    """Mesh text could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """A structurally parsed object fails a semantic invariant."""


class DisconnectionError(ValidationError):
    """A graph that must be connected has several components."""

    def __init__(self, component_sizes):
        self.component_sizes = sorted(component_sizes, reverse=True)
        super().__init__(
            f"graph is disconnected: {len(self.component_sizes)} components "
            f"of sizes {self.component_sizes}"
        )


class RankError(ValueError):
    """Too few positive eigenvalues for the requested embedding dimension."""


class NumericalError(ArithmeticError):
    """A factorization failed even after regularization."""


class ConfigurationError(ValueError):
    """A run or lead configuration is unusable."""
