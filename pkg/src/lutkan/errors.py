"""Exception hierarchy shared by every lutkan component.

Each error class maps onto one CLI exit code (see ``lutkan.cli``): usage
problems exit 2, malformed inputs/models exit 3, unreliable measurements
exit 4, anything else exits 5.
"""


class LutkanError(Exception):
    """Base class for all errors raised by this package."""


class MalformedModelError(LutkanError):
    """A model file or in-memory model violates a structural invariant.

    The message names the offending field path (e.g. ``layers[0].grid.G``)
    whenever the violation came from parsing a file.
    """


class UnsupportedVersionError(LutkanError):
    """A model or compiled artifact declares a format version we cannot read."""


class InputShapeError(LutkanError):
    """An input batch has the wrong dimensionality or width."""


class InputDomainError(LutkanError):
    """An input batch contains values outside the accepted domain (NaN/Inf)."""


class CompileError(LutkanError):
    """LUT compilation failed (bad configuration or non-finite samples)."""


class ConfigError(LutkanError):
    """A runtime or benchmark configuration value is invalid."""


class DegenerateMetricError(LutkanError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class ComparisonError(LutkanError):
    """Two benchmark reports cannot be compared (mismatched configurations)."""


class FitError(LutkanError):
    """Least-squares spline fitting failed beyond what ridge damping can fix."""
