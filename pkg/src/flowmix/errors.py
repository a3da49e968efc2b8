"""Exception hierarchy shared across the package.

The command-line front end maps these classes onto distinct exit codes, so
new exceptions should subclass one of the four top-level categories below.
"""


class FlowmixError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(FlowmixError):
    """Invalid or inconsistent configuration values."""


class IngestionError(FlowmixError):
    """Malformed input data (CSV parsing, ragged grids, duplicates)."""


class FitError(FlowmixError):
    """Model estimation failed."""


class PredictionError(FlowmixError):
    """Prediction could not be produced for the given inputs."""


class GridMismatchError(FitError):
    """Two sampled objects do not share the required time grid."""


class SmoothingError(FitError):
    """A local-linear fit stayed degenerate after bandwidth widening."""


class BandwidthSelectionError(FitError):
    """Every candidate bandwidth failed during cross-validation."""


class InvalidCovarianceError(FitError):
    """A covariance surface violates symmetry or shape requirements."""


class NoVarianceError(FitError):
    """An eigendecomposition produced no positive eigenvalues."""


class EmptyClusterError(FitError):
    """k-means could not produce the requested number of nonempty clusters."""


class ClusterSizeError(FitError):
    """A cluster shrank below the minimum size supported by smoothing."""


class TooEarlyError(PredictionError):
    """The observed window ends before the first evaluable grid point."""


class IntervalFailureError(PredictionError):
    """Too many bootstrap replicates failed to form a prediction band."""


class StudyError(FlowmixError):
    """Too many replicates of a simulation study failed."""
