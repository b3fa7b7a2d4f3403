"""Exception types shared across the package."""


class AlpsError(Exception):
    """Base class for package errors."""


class ParseError(AlpsError):
    """A data file could not be parsed; the message names the offending line."""


class ValidationError(AlpsError):
    """Loaded data violates a structural invariant (BIO validity, treeness)."""


class ConfigError(AlpsError):
    """A run or generator configuration is inconsistent or incomplete."""


class ConstraintError(AlpsError):
    """A constraint set admits no structure (empty label set, no feasible tree)."""


class NumericalError(AlpsError):
    """An inference routine failed numerically beyond the retry policy."""


class TrainingError(AlpsError):
    """Model training could not proceed (empty data, diverging loss)."""
