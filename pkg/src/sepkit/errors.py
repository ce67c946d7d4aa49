"""Error taxonomy shared across the toolkit.

Everything user-triggerable derives from SepkitError so the CLI can map
it to a user-error exit code; anything else is an internal failure.
"""


class SepkitError(Exception):
    """Base class for user-facing errors."""

    kind = "error"


class ConfigError(SepkitError):
    kind = "config"


class InputError(SepkitError):
    kind = "input"


class AlignmentError(SepkitError):
    kind = "alignment"


class GeometryError(SepkitError):
    kind = "geometry"


class InfeasibleRulesError(SepkitError):
    kind = "infeasible-rules"


class MetricError(SepkitError):
    kind = "metric"


class ManifestError(SepkitError):
    kind = "manifest"
