class EmptySubspaceError(ValueError):
    """No eigenvalue of the behavior Gram matrix reaches the threshold."""


class ContractViolation(RuntimeError):
    """A sampler or policy broke its interface contract (e.g. bad action id)."""


class EnumerationBudgetError(RuntimeError):
    """Exhaustive enumeration would exceed the configured budget."""


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = list(missing or [])
