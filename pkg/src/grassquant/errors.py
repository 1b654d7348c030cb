"""Exception types shared across the package.

Invalid arguments (bad shapes, out-of-range parameters) raise the builtin
ValueError; everything that can fail for numerical or I/O reasons gets a
dedicated class so callers can react (e.g. fall back to a full update on a
degenerate quantization step).
"""


class GrassquantError(Exception):
    """Base class for package-specific failures."""


class NumericalFailure(GrassquantError):
    """A numerical routine did not converge or hit a near-singular input."""


class DegenerateStageError(NumericalFailure):
    """Stage input lost rank after projection; the caller should fall back
    to a full re-quantization for this time instant."""


class CapacityExceededError(GrassquantError):
    """Requested codebook size is beyond the exhaustive-search guard."""


class NeedsCalibrationError(GrassquantError):
    """A distortion constant is unavailable in closed form and has not been
    calibrated."""


class CodebookFormatError(GrassquantError):
    """Corrupt, truncated or version-incompatible codebook/network file."""


class BindingMismatchError(GrassquantError):
    """A trained network was loaded against a codebook it was not trained
    for."""


class TrainingFailure(GrassquantError):
    """Training diverged (NaN loss); message carries the hyperparameters."""


class ConfigError(GrassquantError):
    """Experiment configuration failed validation."""
