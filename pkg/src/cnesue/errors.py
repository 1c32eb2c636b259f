"""Exception types shared across the package."""


class CneSueError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CneSueError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class EmptyAttentionError(CneSueError, ValueError):
    """A softmax was asked to normalise over zero unmasked positions."""


class ConfigError(CneSueError, ValueError):
    """A configuration value or input file violates a declared constraint."""


class DataFormatError(CneSueError, ValueError):
    """A row of an input file could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class NonFiniteError(CneSueError, FloatingPointError):
    """A NaN or infinity surfaced where a finite value is required."""
