"""Shared exception types."""


class NumericError(RuntimeError):
    """Quadrature or iteration failed to produce a trustworthy number."""


class ConfigurationError(ValueError):
    """A run configuration is structurally or semantically invalid."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class RejectedInstance(ValueError):
    """An input failed a hypothesis precondition and was not processed."""
