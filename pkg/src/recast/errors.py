"""Exception hierarchy shared by every recast module."""


class RecastError(Exception):
    """Base class for all recast errors."""


class InvalidParameterError(RecastError, ValueError):
    """A distribution or model parameter violates its type invariants."""


class DomainError(RecastError, ValueError):
    """An argument lies outside the support of the function."""


class ShapeError(RecastError, ValueError):
    """Array dimensions are not conformable."""


class ConfigurationError(RecastError, ValueError):
    """A configuration value is missing or invalid."""


class SingularSystemError(RecastError, ArithmeticError):
    """A linear system could not be solved reliably."""


class DeserializationError(RecastError):
    """An artifact file is corrupt or has an unsupported schema version."""


class StateError(RecastError):
    """An object is not in a state that permits the requested operation."""


class DiagnosticsError(RecastError):
    """Chain diagnostics cannot be computed for the given input."""


class SchemaError(RecastError, ValueError):
    """Datasets or artifacts disagree on column names or dimensions."""


class ScenarioError(RecastError):
    """A simulation scenario is invalid or too many replications failed."""
