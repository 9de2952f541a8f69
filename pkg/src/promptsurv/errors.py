"""Exception classes shared across the package.

Each class marks one failure category; the CLI maps them to distinct
exit codes.
"""


class PromptsurvError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(PromptsurvError, ValueError):
    """Operand dimensions are incompatible."""


class DomainError(PromptsurvError, ValueError):
    """A value is outside the mathematical domain of an operation."""


class EmptyInputError(PromptsurvError, ValueError):
    """An operation received an empty matrix or sequence."""


class DegenerateInputError(PromptsurvError, ValueError):
    """Input is structurally valid but degenerate (zero norm, zero variance)."""


class DataValidationError(PromptsurvError, ValueError):
    """A cohort file or manifest failed validation."""


class ConfigError(PromptsurvError, ValueError):
    """A configuration value is invalid or inconsistent."""


class MetricError(PromptsurvError, ValueError):
    """A metric is undefined on the given inputs."""


class TrainingError(PromptsurvError, RuntimeError):
    """Training produced a non-finite value or otherwise diverged."""
