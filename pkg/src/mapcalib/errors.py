"""Exception types shared across the package.

Every error raised by the library derives from :class:`MapcalibError` so
callers (and the CLI) can distinguish data/numeric failures from bugs.
"""


class MapcalibError(Exception):
    """Base class for all library errors."""


# --- model fitting ---------------------------------------------------------

class DimensionMismatch(MapcalibError):
    """Input arrays have incompatible shapes."""


class RankDeficient(MapcalibError):
    """Design matrix is rank deficient beyond tolerance."""


class Separation(MapcalibError):
    """Logistic fit diverged: the classes are (quasi-)separable."""


class NoConvergence(MapcalibError):
    """Iteration limit reached before the gradient tolerance."""


class SingularMatrix(MapcalibError):
    """A matrix that must be inverted is singular to working precision."""


class NotBinary(MapcalibError):
    """A column required to be 0/1 coded contains other values."""


# --- estimators ------------------------------------------------------------

class DegenerateResamples(MapcalibError):
    """Bootstrap resampling kept producing unusable samples."""


class NonPositiveWidth(MapcalibError):
    """Interval width must be strictly positive."""


class TooFewPoints(MapcalibError):
    """Not enough observations for the estimator."""


class TooFewPointsInStratum(MapcalibError):
    """A stratum has too few calibration points; message names it."""


class EmptyMapStratum(MapcalibError):
    """A map class with positive area share has no usable calibration rows."""


class NonPositiveWeight(MapcalibError):
    """Stratum shares/weights must be strictly positive."""


class ZeroVariance(MapcalibError):
    """A variance that appears in a denominator is zero."""


class NegativeValues(MapcalibError):
    """Operation requires a nonnegative column."""


# --- data ingestion --------------------------------------------------------

class SchemaError(MapcalibError):
    """Column role declaration is inconsistent or incomplete."""


class MissingColumn(MapcalibError):
    """A column named by the schema is not in the file."""


class NonNumericCell(MapcalibError):
    """A cell failed 64-bit float parsing; message has row/column."""


class NoCalibrationRows(MapcalibError):
    """Dataset has no calibration rows after ingestion."""


class DuplicateCalibrationIndex(MapcalibError):
    """Calibration index list contains repeats."""


class SampleTooLarge(MapcalibError):
    """Requested subsample exceeds the population size."""


# --- orchestration ---------------------------------------------------------

class ScenarioError(MapcalibError):
    """One or more simulation cells failed; message lists coordinates."""


class ConfigError(MapcalibError):
    """Config file is missing, malformed, or names unknown keys/values."""
