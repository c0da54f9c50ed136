"""Exception taxonomy shared by all stegavox modules."""


class StegavoxError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(StegavoxError):
    """An operation received data violating its preconditions (shapes, signs, emptiness)."""


class FormatError(StegavoxError):
    """A file or clip does not match the expected external format (WAV layout, sample rate)."""


class ConfigError(StegavoxError):
    """A configuration value or combination of values is unusable."""


class EmptyCorpusError(StegavoxError):
    """A corpus scan found no valid audio files."""


class CheckpointError(StegavoxError):
    """A checkpoint file is corrupt, truncated, or incompatible."""


class TrainingDiverged(StegavoxError):
    """Training produced a non-finite loss; carries diagnostic state for dumping."""

    def __init__(self, message, iteration=None, reports=None):
        super().__init__(message)
        self.iteration = iteration
        self.reports = reports or []
