"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """Numerical or physical settings that cannot be honoured (step sizes, ranges)."""


class ProfileFormatError(ValueError):
    """Malformed depth-profile table."""


class EstimationError(RuntimeError):
    """Not enough data to form an estimate."""


class FitInputError(ValueError):
    """Invalid data passed to the fitting engine."""


class ConfigValidationError(ValueError):
    """Experiment config failed validation.

    ``issues`` holds one ``(key, message)`` pair per offending key.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        lines = [f"{key}: {msg}" for key, msg in self.issues]
        super().__init__("invalid config:\n  " + "\n  ".join(lines))
