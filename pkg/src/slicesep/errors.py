"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, parameters, or configuration values."""


class UsageError(RuntimeError):
    """An API was called in a way its contract forbids."""


class RawFormatError(IOError):
    """Raw image file or sidecar is missing, truncated, or inconsistent."""


class NonFiniteGradientError(RuntimeError):
    """A parameter gradient contained NaN or Inf."""

    def __init__(self, param_name, epoch=None):
        self.param_name = param_name
        self.epoch = epoch
        where = f" at epoch {epoch}" if epoch is not None else ""
        super().__init__(f"non-finite gradient in parameter '{param_name}'{where}")


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite; the run was aborted."""

    def __init__(self, epoch, detail=""):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
