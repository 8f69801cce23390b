"""Exception hierarchy shared by every module.

Each error carries a short machine-readable ``code`` so the CLI can emit
structured failure records.
"""


class MacReconError(Exception):
    code = "error"

    def record(self) -> dict:
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class ShapeError(MacReconError, ValueError):
    code = "shape_mismatch"


class NonFiniteError(MacReconError, FloatingPointError):
    code = "non_finite"


class FormatError(MacReconError, ValueError):
    """Corrupt or unsupported MACT / MACR container."""

    code = "bad_format"


class CheckpointError(FormatError):
    code = "bad_checkpoint"


class ModeMismatchError(CheckpointError):
    code = "mode_mismatch"


class InfeasibleRateError(MacReconError, ValueError):
    code = "infeasible_rate"


class DatasetError(MacReconError):
    code = "bad_dataset"


class ConfigError(MacReconError, ValueError):
    code = "bad_config"


class PreconditionError(MacReconError):
    code = "precondition"


class TrainingDivergedError(NonFiniteError):
    """Raised when a loss or gradient turns non-finite mid-training.

    ``last_good`` holds the parameters from the last completed step.
    """

    code = "diverged"

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
