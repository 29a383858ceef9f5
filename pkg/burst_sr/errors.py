"""Exception hierarchy for the burst super-resolution toolkit."""


class BurstSRError(Exception):
    """Base class for every error raised by burst_sr."""


class InvalidArgumentError(BurstSRError, ValueError):
    """An argument is out of range or has the wrong shape."""


class ConfigError(BurstSRError, ValueError):
    """A run configuration file is malformed or inconsistent."""


class NoSignalError(BurstSRError, ValueError):
    """Input carries no usable signal (e.g. constant image for registration)."""


class EmptyBurstError(BurstSRError, ValueError):
    """A burst or frame list is empty, or no HR pixel received any weight."""


class StateError(BurstSRError, RuntimeError):
    """An object was used before the state it depends on was created."""


class NoEdgeError(BurstSRError, ValueError):
    """No edge with enough contrast was found inside the ROI."""


class AmbiguousPeakError(BurstSRError, ValueError):
    """A profile has no single dominant peak."""


class UndefinedCorrelationError(BurstSRError, ValueError):
    """Correlation is undefined because an input has zero variance."""


class TrainingFailureError(BurstSRError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"Training diverged at epoch {epoch}: loss is not finite")
