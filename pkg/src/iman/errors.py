"""Exception types shared across the package.

Each maps to one failure class the CLI translates into a stable exit code.
"""


class ImanError(Exception):
    """Base class for all package errors."""


class DimensionError(ImanError):
    """Shapes of operands do not agree."""


class NumericError(ImanError):
    """Non-finite values where finite ones are required."""


class StateError(ImanError):
    """Operation called in an invalid order or on missing state."""


class StageOrderError(StateError):
    """Training stage invoked before its prerequisite stage."""


class DegenerateFeatureError(ImanError):
    """Zero-norm rows or collapsed samples make a similarity undefined."""


class ClusteringError(ImanError):
    """Pseudo-labeling produced no usable clusters."""


class ParseError(ImanError):
    """Malformed file content; message carries the line number."""


class SchemaError(ImanError):
    """File structure (columns, header) does not match the expected schema."""


class ConfigError(ImanError):
    """Bad configuration contents (unknown key, bad value)."""
