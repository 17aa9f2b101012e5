"""Exception types shared across the package."""


class CirlabError(Exception):
    """Base class for all package errors."""


class ConfigError(CirlabError):
    """Invalid or inconsistent configuration."""


class ShapeError(CirlabError):
    """Array dimension mismatch."""


class StreamGenerationError(CirlabError):
    """Stream construction failed (e.g. a class pool was exhausted)."""


class StreamValidationError(CirlabError):
    """A stream violates its declared invariants."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("stream validation failed:\n" + "\n".join(f"  - {p}" for p in self.issues))


class BufferCapacityError(CirlabError):
    """Prototype buffer would exceed its capacity."""


class NumericalError(CirlabError):
    """A non-finite value appeared where a finite one is required."""


class ExperienceError(CirlabError):
    """An experience cannot be trained on (e.g. empty labeled stream)."""


class EvaluationError(CirlabError):
    """Evaluation requested over an empty or invalid restriction."""
